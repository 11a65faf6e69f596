use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use seqref_core::geometry::{bezier_point, build_trajectory, min_separation, trajectory_length, MoveParams};
use seqref_core::{Point, Trajectory};
use seqref_testkit::{arc_length_quadrature, de_casteljau};

fn pts(t: &Trajectory) -> [(f64, f64); 3] {
    [(t.p0.x, t.p0.y), (t.p1.x, t.p1.y), (t.p2.x, t.p2.y)]
}

fn random_traj(rng: &mut ChaCha8Rng) -> Trajectory {
    let mut p = || Point::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
    Trajectory { p0: p(), p1: p(), p2: p(), params: MoveParams { r1: 0.0, r2: 0.0, theta_prev: 0.0, delta_theta: 0.0 } }
}

#[test]
fn bezier_matches_de_casteljau_on_10k_curves() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let t = random_traj(&mut rng);
        let u: f64 = rng.gen();
        let got = bezier_point(&t, u).unwrap();
        let want = de_casteljau(pts(&t), u);
        worst = worst.max((got.x - want.0).abs()).max((got.y - want.1).abs());
    }
    assert!(worst <= 1e-12, "{worst}");
}

#[test]
fn length_matches_quadrature_on_10k_curves() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..10_000 {
        let t = random_traj(&mut rng);
        let want = arc_length_quadrature(pts(&t));
        let got = trajectory_length(&t);
        assert!((got - want).abs() <= 1e-6 * want.max(1e-300), "{got} vs {want} for {t:?}");
    }
}

#[test]
fn length_of_near_degenerate_curves() {
    // Nearly folded and nearly straight curves stress the closed form.
    let cases = [
        [(0.0, 0.0), (1.0, 0.0), (1e-9, 0.0)],
        [(0.0, 0.0), (0.5, 1e-12), (1.0, 0.0)],
        [(0.0, 0.0), (1.0, 1e-7), (0.0, 2e-7)],
        [(0.0, 0.0), (0.2, 0.0), (0.2, 0.1)],
    ];
    for c in cases {
        let t = Trajectory {
            p0: Point::new(c[0].0, c[0].1),
            p1: Point::new(c[1].0, c[1].1),
            p2: Point::new(c[2].0, c[2].1),
            params: MoveParams { r1: 0.0, r2: 0.0, theta_prev: 0.0, delta_theta: 0.0 },
        };
        let want = arc_length_quadrature(c);
        assert!((trajectory_length(&t) - want).abs() <= 1e-6 * want, "{c:?}");
    }
}

#[test]
fn endpoints_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..1000 {
        let t = random_traj(&mut rng);
        assert_eq!(bezier_point(&t, 0.0).unwrap(), t.p0);
        assert_eq!(bezier_point(&t, 1.0).unwrap(), t.p2);
    }
}

proptest! {
    #[test]
    fn length_invariant_under_rigid_motion(
        r1 in 0.0f64..0.3, r2 in 0.0f64..0.3, theta in 0.0f64..6.28, delta in -1.6f64..1.6,
        rot in 0.0f64..6.28, dx in -5.0f64..5.0, dy in -5.0f64..5.0,
    ) {
        let a = build_trajectory(Point::ORIGIN, theta, r1, r2, delta);
        let b = build_trajectory(Point::new(dx, dy), theta + rot, r1, r2, delta);
        prop_assert!((trajectory_length(&a) - trajectory_length(&b)).abs() <= 1e-9);
    }

    #[test]
    fn separation_symmetric_and_self_zero(seed in any::<u64>(), samples in 2usize..100) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_traj(&mut rng);
        let b = random_traj(&mut rng);
        prop_assert_eq!(min_separation(&a, &a, samples).unwrap(), 0.0);
        prop_assert_eq!(min_separation(&a, &b, samples).unwrap(), min_separation(&b, &a, samples).unwrap());
    }

    #[test]
    fn heading_carried_forward(theta in -10.0f64..10.0, delta in -1.6f64..1.6, r1 in 0.01f64..0.3, r2 in 0.01f64..0.3) {
        let t = build_trajectory(Point::ORIGIN, theta, r1, r2, delta);
        let leg = t.p2 - t.p1;
        let dir = leg.y.atan2(leg.x);
        let gap = (dir - (theta + delta)).rem_euclid(std::f64::consts::TAU);
        prop_assert!(gap.min(std::f64::consts::TAU - gap) < 1e-9);
        prop_assert_eq!(t.params.heading_out(), theta + delta);
    }
}
