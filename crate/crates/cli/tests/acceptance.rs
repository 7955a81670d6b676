//! Acceptance suite. Each test prints one `PASS` or `FAIL` line with the
//! measured value next to its pinned bound, then asserts.

use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use skullstrip_cli::{cmd_strip, StripArgs};
use skullstrip_core::eval::dice;
use skullstrip_core::levelset::{evolve_observed, signed_distance_from_mask, EdgePotential, EvolutionConfig, LevelSetField};
use skullstrip_core::nifti::{load_nifti, nifti_bytes, read_nifti_bytes, save_nifti};
use skullstrip_core::phantom::{generate_atlas, generate_phantom, PhantomSpec};
use skullstrip_core::registration::{propagate_mask, register_affine, RegistrationConfig};
use skullstrip_core::{AffineTransform, BinaryMask, Geometry, Volume};
use std::path::Path;
use std::sync::OnceLock;
use std::time::Instant;

// Pinned bounds.
const SUITE_SEEDS: std::ops::RangeInclusive<u64> = 1..=10;
const SUITE_MAX_DEG: f64 = 5.0;
const SUITE_MAX_MM: f64 = 5.0;
const SUITE_MIN_DICE: f64 = 0.95;
const SUITE_MAX_SECONDS: f64 = 60.0;
const RECOVERY_CASES: u64 = 20;
const RECOVERY_MAX_DEG: f64 = 10.0;
const RECOVERY_MAX_SCALE: f64 = 0.10;
const RECOVERY_MAX_MM: f64 = 10.0;
const RECOVERY_MIN_DICE: f64 = 0.97;
const TRANSLATION_TOL_MM: f64 = 0.5;
const MCF_R0: f64 = 10.0;
const MCF_BETA: f64 = 1.0;
const MCF_REL_TOL: f64 = 0.10;
const MCF_STOP_RADIUS: f64 = 3.0;
const EDT_TRIALS: u64 = 50;
const LARGE_MAX_SECONDS: f64 = 120.0;
const PROPERTY_CASES: u32 = 1000;
const PROPERTY_TOL: f64 = 1e-9;

fn report(id: u32, name: &str, pass: bool, detail: &str) {
    println!("{} C{id} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "C{id} {name}: {detail}");
}

struct Case {
    seed: u64,
    propagated: f64,
    fin: f64,
    seconds: f64,
}

/// Writes patient/atlas files and runs the full strip command on them.
fn strip_case(dir: &Path, spec: &PhantomSpec) -> (serde_json::Value, BinaryMask, BinaryMask) {
    let (patient, truth) = generate_phantom(spec).unwrap();
    let atlas_spec = PhantomSpec {
        affine_perturbation: None,
        ..spec.clone()
    };
    let (atlas, atlas_mask) = generate_atlas(&atlas_spec).unwrap();
    save_nifti(&patient, dir.join("p.nii")).unwrap();
    save_nifti(&atlas, dir.join("a.nii")).unwrap();
    save_nifti(&atlas_mask.to_volume::<f32>(), dir.join("am.nii")).unwrap();
    let args = StripArgs {
        input: dir.join("p.nii"),
        atlas: dir.join("a.nii"),
        atlas_mask: dir.join("am.nii"),
        config: None,
        output_mask: dir.join("m.nii"),
        output_brain: Some(dir.join("b.nii")),
        output_transform: Some(dir.join("t.txt")),
        report: None,
        overlay_dir: None,
    };
    let r = cmd_strip(&args).unwrap();
    let mask = load_nifti(dir.join("m.nii")).unwrap().threshold(0.5);
    (r, mask, truth)
}

fn suite() -> &'static [Case] {
    static SUITE: OnceLock<Vec<Case>> = OnceLock::new();
    SUITE.get_or_init(|| {
        let base = PhantomSpec::default();
        SUITE_SEEDS
            .map(|seed| {
                let dir = tempfile::tempdir().unwrap();
                let t = base.random_perturbation(seed, SUITE_MAX_DEG, 0.0, SUITE_MAX_MM).unwrap();
                let spec = PhantomSpec {
                    seed,
                    affine_perturbation: Some(t),
                    ..base.clone()
                };
                let start = Instant::now();
                let (_, fin, truth) = strip_case(dir.path(), &spec);
                let seconds = start.elapsed().as_secs_f64();
                // the propagated mask strip refined, rebuilt from its transform file
                let reg: AffineTransform = std::fs::read_to_string(dir.path().join("t.txt")).unwrap().parse().unwrap();
                let (_, atlas_mask) = generate_atlas(&base).unwrap();
                let prop = propagate_mask(&atlas_mask, &reg, truth.geometry()).unwrap();
                Case {
                    seed,
                    propagated: dice(&prop, &truth).unwrap().dice,
                    fin: dice(&fin, &truth).unwrap().dice,
                    seconds,
                }
            })
            .collect()
    })
}

#[test]
fn c1_end_to_end_phantom_dice() {
    let cases = suite();
    let worst = cases.iter().map(|c| c.fin).fold(1.0, f64::min);
    let slowest = cases.iter().map(|c| c.seconds).fold(0.0, f64::max);
    let detail = format!(
        "worst dice {worst:.4} (>= {SUITE_MIN_DICE}), slowest case {slowest:.1} s (< {SUITE_MAX_SECONDS} s), per seed [{}]",
        cases.iter().map(|c| format!("{}:{:.4}", c.seed, c.fin)).collect::<Vec<_>>().join(" ")
    );
    report(1, "end-to-end phantom dice", worst >= SUITE_MIN_DICE && slowest < SUITE_MAX_SECONDS, &detail);
}

#[test]
fn c2_refinement_adds_value() {
    let cases = suite();
    let improved = cases.iter().filter(|c| c.fin > c.propagated).count();
    let min_gain = cases.iter().map(|c| c.fin - c.propagated).fold(f64::INFINITY, f64::min);
    let detail = format!(
        "{improved}/{} cases improved, smallest gain {min_gain:+.4}, per seed [{}]",
        cases.len(),
        cases.iter().map(|c| format!("{}:{:.4}->{:.4}", c.seed, c.propagated, c.fin)).collect::<Vec<_>>().join(" ")
    );
    report(2, "refinement adds value", improved == cases.len(), &detail);
}

#[test]
fn c3_registration_recovery() {
    let base = PhantomSpec {
        noise_sigma: 0.0,
        ..PhantomSpec::default()
    };
    let c = base.center().unwrap();
    let (atlas, atlas_mask) = generate_atlas(&base).unwrap();
    let cfg = RegistrationConfig::default();
    let recover = |t: AffineTransform| {
        let spec = PhantomSpec {
            affine_perturbation: Some(t),
            ..base.clone()
        };
        let (patient, truth) = generate_phantom(&spec).unwrap();
        let r = register_affine(&patient, &atlas, &cfg, &AffineTransform::identity()).unwrap();
        (r.transform, truth)
    };

    let mut worst_dice = 1.0f64;
    for seed in 1..=RECOVERY_CASES {
        let t = base.random_perturbation(seed, RECOVERY_MAX_DEG, RECOVERY_MAX_SCALE, RECOVERY_MAX_MM).unwrap();
        let (reg, truth) = recover(t);
        let prop = propagate_mask(&atlas_mask, &reg, truth.geometry()).unwrap();
        worst_dice = worst_dice.min(dice(&prop, &truth).unwrap().dice);
    }

    // translation compared as the displacement of the volume center
    let mut worst_mm = 0.0f64;
    for seed in 1..=RECOVERY_CASES {
        let t = base.random_perturbation(1000 + seed, 0.0, 0.0, RECOVERY_MAX_MM).unwrap();
        let (reg, _) = recover(t);
        let want = t.invert().unwrap().apply_point(c);
        let got = reg.apply_point(c);
        for k in 0..3 {
            worst_mm = worst_mm.max((got[k] - want[k]).abs());
        }
    }
    let detail = format!(
        "worst propagated dice {worst_dice:.4} (>= {RECOVERY_MIN_DICE}) over {RECOVERY_CASES} affine cases; worst translation error {worst_mm:.3} mm (<= {TRANSLATION_TOL_MM}) over {RECOVERY_CASES} translation cases"
    );
    report(3, "registration recovery", worst_dice >= RECOVERY_MIN_DICE && worst_mm <= TRANSLATION_TOL_MM, &detail);
}

/// Mean distance from `c` of the interpolated zero crossings along grid edges.
fn crossing_radius(phi: &LevelSetField<f64>, c: f64) -> Option<f64> {
    let g = phi.geometry();
    let v = phi.values();
    let (mut sum, mut n) = (0.0, 0usize);
    for idx in 0..g.len() {
        let p = g.coords(idx);
        for a in 0..3 {
            if p[a] + 1 >= g.dims[a] {
                continue;
            }
            let mut q = p;
            q[a] += 1;
            let (f0, f1) = (v[idx], v[g.linear(q[0], q[1], q[2])]);
            if (f0 <= 0.0) != (f1 <= 0.0) {
                let s = f0 / (f0 - f1);
                let mut x = p.map(|i| i as f64);
                x[a] += s;
                sum += x.iter().map(|xi| (xi - c).powi(2)).sum::<f64>().sqrt();
                n += 1;
            }
        }
    }
    (n > 0).then(|| sum / n as f64)
}

#[test]
fn c4_mean_curvature_flow() {
    let n = 64;
    let c = (n - 1) as f64 / 2.0;
    let g = Geometry::axis_aligned([n; 3], [1.0; 3]).unwrap();
    let ball = BinaryMask::from_fn(g.clone(), |p| p.iter().map(|&x| (x as f64 - c).powi(2)).sum::<f64>() <= MCF_R0 * MCF_R0);
    let phi0: LevelSetField<f64> = signed_distance_from_mask(&ball).unwrap();
    let r_start = crossing_radius(&phi0, c).unwrap();
    let cfg = EvolutionConfig {
        alpha_balloon: 0.0,
        beta_curvature: MCF_BETA,
        gamma_advection: 0.0,
        convergence_fraction: 0.0,
        // stop before extinction: R(t) reaches 2 voxels at t = (R0² - 4) / 4β
        max_iterations: ((MCF_R0 * MCF_R0 - 4.0) / (4.0 * MCF_BETA) / (0.5 / (6.0 * MCF_BETA))) as usize,
        ..EvolutionConfig::default()
    };
    let mut worst = 0.0f64;
    let mut checked = 0usize;
    let mut last_r = r_start;
    let mut done = false;
    let _ = evolve_observed(&phi0, &EdgePotential::uniform(g), &cfg, &mut |_, t, phi| {
        if done {
            return;
        }
        let Some(r) = crossing_radius(phi, c) else {
            done = true;
            return;
        };
        if r < MCF_STOP_RADIUS {
            done = true;
            return;
        }
        let want = (r_start * r_start - 4.0 * MCF_BETA * t).max(0.0).sqrt();
        worst = worst.max((r - want).abs() / want);
        checked += 1;
        last_r = r;
    });
    let detail = format!(
        "max relative radius error {worst:.4} (<= {MCF_REL_TOL}) over {checked} iterations, R {r_start:.2} -> {last_r:.2}, stopped below {MCF_STOP_RADIUS}: {done}"
    );
    report(4, "mean curvature flow", done && checked > 100 && worst <= MCF_REL_TOL, &detail);
}

fn brute_signed_distance(m: &BinaryMask) -> Vec<f64> {
    let g = m.geometry();
    let pts: Vec<[f64; 3]> = (0..g.len()).map(|i| g.coords(i).map(|v| v as f64)).collect();
    let half = 0.5 * g.min_spacing();
    (0..g.len())
        .map(|i| {
            let d2 = (0..g.len())
                .filter(|&j| m.data()[j] != m.data()[i])
                .map(|j| (0..3).map(|a| ((pts[i][a] - pts[j][a]) * g.spacing[a]).powi(2)).sum::<f64>())
                .fold(f64::INFINITY, f64::min);
            let d = d2.sqrt() - half;
            if m.data()[i] {
                -d
            } else {
                d
            }
        })
        .collect()
}

#[test]
fn c5_distance_transform_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut mismatches = 0usize;
    let mut compared = 0usize;
    for _ in 0..EDT_TRIALS {
        let density: f64 = rng.random_range(0.02..0.6);
        let bits: Vec<bool> = (0..16 * 16 * 16).map(|_| rng.random_bool(density)).collect();
        for spacing in [[1.0; 3], [1.0, 1.0, 3.0]] {
            let g = Geometry::axis_aligned([16; 3], spacing).unwrap();
            let m = BinaryMask::new(g, bits.clone()).unwrap();
            if m.is_empty() || m.is_full() {
                continue;
            }
            let phi: LevelSetField<f64> = signed_distance_from_mask(&m).unwrap();
            let oracle = brute_signed_distance(&m);
            mismatches += phi.values().iter().zip(&oracle).filter(|(a, b)| a != b).count();
            compared += 1;
        }
    }
    let detail = format!("{mismatches} differing voxels over {compared} masks (exact equality required)");
    report(5, "distance transform oracle", mismatches == 0 && compared == 2 * EDT_TRIALS as usize, &detail);
}

#[test]
fn c6_dice_identities() {
    let g = Geometry::axis_aligned([8, 1, 1], [1.0; 3]).unwrap();
    let a = BinaryMask::from_fn(g.clone(), |c| c[0] < 4);
    let b = BinaryMask::from_fn(g.clone(), |c| (1..7).contains(&c[0]));
    let disjoint = BinaryMask::from_fn(g, |c| c[0] >= 4);
    let same = dice(&a, &a).unwrap().dice;
    let none = dice(&a, &disjoint).unwrap().dice;
    let hand = dice(&a, &b).unwrap();
    let pass = same == 1.0 && none == 0.0 && hand.dice == 0.6 && (hand.true_voxels_a, hand.true_voxels_b, hand.intersection) == (4, 6, 3);
    report(6, "dice identities", pass, &format!("self {same}, disjoint {none}, 4/6/3 case {}", hand.dice));
}

#[test]
fn c7_determinism() {
    let base = PhantomSpec::default();
    let spec = PhantomSpec {
        seed: 1,
        affine_perturbation: Some(base.random_perturbation(1, SUITE_MAX_DEG, 0.0, SUITE_MAX_MM).unwrap()),
        ..base
    };
    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    strip_case(d1.path(), &spec);
    strip_case(d2.path(), &spec);
    let files = ["m.nii", "b.nii", "t.txt"];
    let same: Vec<bool> = files
        .iter()
        .map(|f| std::fs::read(d1.path().join(f)).unwrap() == std::fs::read(d2.path().join(f)).unwrap())
        .collect();
    let detail = format!("byte-identical outputs {:?}", files.iter().zip(&same).collect::<Vec<_>>());
    report(7, "determinism", same.iter().all(|&s| s), &detail);
}

#[test]
fn c8_large_volume_runtime() {
    let base = PhantomSpec {
        dims: [128; 3],
        spacing: [0.5; 3],
        ..PhantomSpec::default()
    };
    let spec = PhantomSpec {
        seed: 8,
        affine_perturbation: Some(base.random_perturbation(8, SUITE_MAX_DEG, 0.0, SUITE_MAX_MM).unwrap()),
        ..base
    };
    let dir = tempfile::tempdir().unwrap();
    let (r, mask, truth) = strip_case(dir.path(), &spec);
    let total = r["timings_s"]["total"].as_f64().unwrap();
    let d = dice(&mask, &truth).unwrap().dice;
    let detail = format!("128^3 strip took {total:.1} s by its run report (<= {LARGE_MAX_SECONDS} s), dice {d:.4}");
    report(8, "large volume runtime", total <= LARGE_MAX_SECONDS, &detail);
}

fn rotation(axis: [f64; 3], angle: f64) -> AffineTransform {
    AffineTransform::about_center(axis, angle, 1.0, [0.0; 3], [0.0; 3])
}

fn affine() -> impl Strategy<Value = AffineTransform> {
    (prop::array::uniform3(-1.0f64..1.0), -3.2f64..3.2, prop::array::uniform3(0.5f64..2.0), prop::array::uniform3(-50.0f64..50.0)).prop_map(
        |(axis, angle, s, t)| {
            let scale = AffineTransform::from_params(&[s[0], 0.0, 0.0, 0.0, s[1], 0.0, 0.0, 0.0, s[2], 0.0, 0.0, 0.0]);
            AffineTransform::new(rotation(axis, angle).matrix * scale.matrix, t.into())
        },
    )
}

fn point() -> impl Strategy<Value = [f64; 3]> {
    prop::array::uniform3(-100.0f64..100.0)
}

fn runner() -> TestRunner {
    TestRunner::new_with_rng(
        Config {
            cases: PROPERTY_CASES,
            failure_persistence: None,
            ..Config::default()
        },
        TestRng::deterministic_rng(RngAlgorithm::ChaCha),
    )
}

#[test]
fn c9_property_suites() {
    let close = |a: [f64; 3], b: [f64; 3], scale: f64| a.iter().zip(&b).all(|(x, y)| (x - y).abs() <= PROPERTY_TOL * scale);

    let group = runner().run(&(affine(), affine(), affine(), point()), |(a, b, c, p)| {
        let left = AffineTransform::compose(&AffineTransform::compose(&a, &b), &c).apply_point(p);
        let right = AffineTransform::compose(&a, &AffineTransform::compose(&b, &c)).apply_point(p);
        let size = left.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        prop_assert!(close(left, right, size));
        let id = AffineTransform::identity();
        prop_assert_eq!(AffineTransform::compose(&id, &a), a);
        prop_assert_eq!(AffineTransform::compose(&a, &id), a);
        let inv = a.invert().unwrap();
        prop_assert!(close(AffineTransform::compose(&a, &inv).apply_point(p), p, 1.0));
        prop_assert!(close(AffineTransform::compose(&inv, &a).apply_point(p), p, 1.0));
        Ok(())
    });

    let geometry = (
        prop::array::uniform3(1usize..7),
        prop::array::uniform3(0.25f64..4.0),
        prop::array::uniform3(-100.0f64..100.0),
        prop::array::uniform3(-1.0f64..1.0),
        -3.2f64..3.2,
    )
        .prop_map(|(dims, spacing, origin, axis, angle)| Geometry::new(dims, spacing, origin, rotation(axis, angle).matrix).unwrap());
    let index_world = runner().run(&(geometry.clone(), prop::array::uniform3(-200.0f64..200.0), point()), |(g, ijk, xyz)| {
        prop_assert!(close(g.world_to_index(g.index_to_world(ijk)), ijk, 1.0));
        prop_assert!(close(g.index_to_world(g.world_to_index(xyz)), xyz, 1.0));
        Ok(())
    });

    let volume = geometry.prop_flat_map(|g| {
        let n = g.len();
        (Just(g), prop::collection::vec(prop::num::f32::NORMAL | prop::num::f32::SUBNORMAL | prop::num::f32::ZERO, n))
    });
    let nifti = runner().run(&volume, |(g, data)| {
        let v = Volume::new(g, data).unwrap();
        let back = read_nifti_bytes(&nifti_bytes(&v)).unwrap();
        prop_assert!(back.data().iter().zip(v.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
        Ok(())
    });

    let status = |ok: bool| if ok { "ok" } else { "failed" };
    let detail = format!(
        "{PROPERTY_CASES} cases each: group laws (tol {PROPERTY_TOL:e}) {}, index/world round trip (tol {PROPERTY_TOL:e}) {}, nifti bit-exact {}",
        status(group.is_ok()),
        status(index_world.is_ok()),
        status(nifti.is_ok())
    );
    report(9, "transform and geometry properties", group.is_ok() && index_world.is_ok() && nifti.is_ok(), &detail);
}
