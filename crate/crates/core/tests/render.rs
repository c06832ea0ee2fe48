mod common;

use common::{brute_render, random_camera, random_splats};
use probsplat::render::{composite_hits, render_view, RenderOptions, Shade, SplatHit, EARLY_EXIT_T};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn scene(seed: u64, n: usize, w: usize, h: usize) -> (Vec<probsplat::scene::SplatPrimitive>, probsplat::scene::Camera) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cam = random_camera(&mut rng, w, h);
    (random_splats(&mut rng, n), cam)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn tiled_render_matches_brute_force(seed in 0u64..10_000, n in 0usize..30, w in 4usize..36, h in 4usize..36, tile in 1usize..40) {
        let (splats, cam) = scene(seed, n, w, h);
        let r = render_view(&splats, &cam, &RenderOptions { tile_size: tile, ..RenderOptions::default() });
        for (k, b) in brute_render(&splats, &cam).iter().enumerate() {
            for c in 0..3 {
                prop_assert!((r.rgb.data[3 * k + c] - b.rgb[c]).abs() <= 1e-12);
            }
            prop_assert!((r.prob.data[k] - b.prob).abs() <= 1e-12);
            prop_assert!((r.depth.data[k] - b.depth).abs() <= 1e-12);
            prop_assert!((r.final_t.data[k] - b.final_t).abs() <= 1e-12);
            prop_assert!((r.normal.data[k] - b.normal).norm() <= 1e-9);
            let hits: Vec<(u32, f64)> = r.hits.pixel(k).iter().map(|h| (h.splat_index, h.alpha)).collect();
            prop_assert_eq!(hits.len(), b.hits.len());
            for (a, e) in hits.iter().zip(&b.hits) {
                prop_assert_eq!(a.0, e.0);
                prop_assert!((a.1 - e.1).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn rendered_maps_respect_bounds(seed in 0u64..10_000, n in 1usize..40) {
        let (splats, cam) = scene(seed, n, 20, 18);
        let r = render_view(&splats, &cam, &RenderOptions::default());
        for k in 0..cam.pixel_count() {
            let (w, t) = (r.weight.data[k], r.final_t.data[k]);
            prop_assert!((0.0..=1.0).contains(&t));
            prop_assert!(w >= 0.0 && w <= 1.0 - t + 1e-12);
            prop_assert!(r.prob.data[k] >= 0.0 && r.prob.data[k] <= w + 1e-12);
            for c in 0..3 {
                prop_assert!(r.rgb.data[3 * k + c] >= 0.0 && r.rgb.data[3 * k + c] <= w + 1e-12);
            }
        }
    }

    #[test]
    fn appending_a_hit_never_raises_transmittance(alphas in prop::collection::vec(1.0 / 255.0..0.9999f64, 1..30)) {
        let shade = Shade { color: nalgebra::Vector3::repeat(0.5), prob: 0.5, normal: nalgebra::Vector3::z() };
        let hits: Vec<SplatHit> = alphas
            .iter()
            .enumerate()
            .map(|(i, &alpha)| SplatHit {
                splat_index: 0,
                t: i as f64 + 1.0,
                depth: i as f64 + 1.0,
                u: 0.0,
                v: 0.0,
                gauss_value: 1.0,
                alpha,
                capped: false,
                facing: 1.0,
            })
            .collect();
        let mut prev = 1.0;
        for k in 1..=hits.len() {
            let c = composite_hits(&hits[..k], 0.0, |_| &shade);
            prop_assert!(c.final_t <= prev);
            prop_assert!((c.weight - (1.0 - c.final_t)).abs() <= 1e-12);
            prev = c.final_t;
        }
    }
}

#[test]
fn early_exit_drops_only_hidden_hits() {
    let (splats, cam) = scene(5, 40, 24, 24);
    let exact = render_view(&splats, &cam, &RenderOptions { early_exit: 0.0, ..RenderOptions::default() });
    let fast = render_view(&splats, &cam, &RenderOptions::default());
    for k in 0..cam.pixel_count() {
        // what the cutoff skips is bounded by the transmittance at the cutoff
        assert!((exact.prob.data[k] - fast.prob.data[k]).abs() <= EARLY_EXIT_T);
        assert!(fast.hits.pixel(k).len() <= exact.hits.pixel(k).len());
    }
}

#[test]
fn dropping_hit_lists_leaves_images_unchanged() {
    let (splats, cam) = scene(8, 25, 30, 20);
    let a = render_view(&splats, &cam, &RenderOptions::default());
    let b = render_view(&splats, &cam, &RenderOptions { keep_hits: false, ..RenderOptions::default() });
    assert_eq!(a.rgb, b.rgb);
    assert_eq!(a.prob, b.prob);
    assert_eq!(a.depth, b.depth);
    assert!(b.hits.is_empty());
}

#[test]
fn repeat_renders_are_identical_across_thread_counts() {
    let (splats, cam) = scene(13, 30, 33, 27);
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
    let a = one.install(|| render_view(&splats, &cam, &RenderOptions::default()));
    let b = four.install(|| render_view(&splats, &cam, &RenderOptions::default()));
    assert_eq!(a.rgb, b.rgb);
    assert_eq!(a.prob, b.prob);
    assert_eq!(a.hits, b.hits);
}
