use ego_pnr::annotations::{parse_manifest, ClipAnnotation, DatasetManifest, Split};
use ego_pnr::labels::{build_targets, cutmix_pair, mixup_pair, smooth, Sample};
use ego_pnr::model::{log_softmax, soft_cross_entropy};
use ego_pnr::sampling::{assign_pseudo_pnr, sample_clip, sample_frames, SamplerKind, TrimmedRange};
use proptest::prelude::*;

fn kind() -> impl Strategy<Value = SamplerKind> {
    prop_oneof![
        Just(SamplerKind::EvenlySpaced),
        Just(SamplerKind::StratifiedRandom),
        Just(SamplerKind::UniformRandom),
    ]
}

fn clip() -> impl Strategy<Value = ClipAnnotation> {
    (any::<bool>(), 0u32..240).prop_map(|(pos, pnr)| {
        if pos {
            ClipAnnotation::positive("c", pnr)
        } else {
            ClipAnnotation::negative("c")
        }
    })
}

proptest! {
    #[test]
    fn sampled_indices_are_sorted_in_window(
        start in 0u32..500, len in 1u32..300, n in 1usize..40, k in kind(), seed in any::<u64>()
    ) {
        prop_assume!(n as u32 <= len);
        let t = TrimmedRange { start_frame: start, length_frames: len };
        let mut rng = ego_pnr::rng_for(seed, 0);
        let idx = sample_frames(t, n, k, &mut rng).unwrap();
        prop_assert_eq!(idx.len(), n);
        prop_assert!(idx.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(idx.iter().all(|&f| t.contains(f)));
    }

    #[test]
    fn pseudo_slot_is_first_argmin(
        mut idx in prop::collection::btree_set(0u32..400, 1..20).prop_map(|s| s.into_iter().collect::<Vec<_>>()),
        pnr in 0u32..400
    ) {
        idx.sort_unstable();
        let slot = assign_pseudo_pnr(&idx, pnr);
        let best = idx.iter().map(|f| f.abs_diff(pnr)).min().unwrap();
        let first = idx.iter().position(|f| f.abs_diff(pnr) == best).unwrap();
        prop_assert_eq!(slot, first);
    }

    #[test]
    fn trimmed_window_holds_the_pnr(c in clip(), k in kind(), seed in any::<u64>()) {
        let mut rng = ego_pnr::rng_for(seed, 3);
        let s = sample_clip(&c, 16, k, &mut rng).unwrap();
        prop_assert!((150..=240).contains(&s.trimmed.length_frames));
        prop_assert!(s.trimmed.end() <= c.num_frames);
        if let Some(p) = c.pnr_frame {
            prop_assert!(s.trimmed.contains(p));
            prop_assert_eq!(s.pseudo_pnr_slot, Some(assign_pseudo_pnr(&s.frame_indices, p)));
        } else {
            prop_assert_eq!(s.pseudo_pnr_slot, None);
        }
    }

    #[test]
    fn targets_stay_distributions(
        a in clip(), b in clip(), lambda in 0.0f64..=1.0, eps in 0.0f64..=1.0,
        cut in (0usize..=16).prop_flat_map(|len| (0..=16 - len, Just(len))), seed in any::<u64>()
    ) {
        let mut rng = ego_pnr::rng_for(seed, 0);
        let mk = |c: &ClipAnnotation, rng: &mut ego_pnr::Rng| {
            let s = sample_clip(c, 16, SamplerKind::EvenlySpaced, rng).unwrap();
            Sample { clip_id: c.clip_id.clone(), features: vec![1.0; 32], targets: build_targets(&s, c).unwrap() }
        };
        let (sa, sb) = (mk(&a, &mut rng), mk(&b, &mut rng));
        let mixed = mixup_pair(&sa, &sb, lambda);
        let cutted = cutmix_pair(&mixed, &sb, cut.0, cut.1);
        let smoothed = cutted.targets.smoothed(eps).unwrap();
        for v in [&mixed.targets.oscc, &mixed.targets.temporal, &cutted.targets.temporal, &smoothed.oscc, &smoothed.temporal] {
            prop_assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(v.iter().all(|&x| (0.0..=1.0 + 1e-12).contains(&x)));
        }
    }

    #[test]
    fn smoothing_never_increases_the_max(t in prop::collection::vec(0.0f64..1.0, 2..20), eps in 0.0f64..=1.0) {
        let sum: f64 = t.iter().sum();
        prop_assume!(sum > 1e-6);
        let t: Vec<f64> = t.iter().map(|v| v / sum).collect();
        let s = smooth(&t, eps).unwrap();
        let max = |v: &[f64]| v.iter().cloned().fold(f64::MIN, f64::max);
        prop_assert!(max(&s) <= max(&t) + 1e-12);
    }

    #[test]
    fn cross_entropy_is_shift_invariant(
        z in prop::collection::vec(-30.0f64..30.0, 2..18), c in -50.0f64..50.0
    ) {
        let k = z.len();
        let t = vec![1.0 / k as f64; k];
        let shifted: Vec<f64> = z.iter().map(|v| v + c).collect();
        let (a, ga) = soft_cross_entropy(&z, &t);
        let (b, gb) = soft_cross_entropy(&shifted, &t);
        prop_assert!((a - b).abs() < 1e-9);
        for (x, y) in ga.iter().zip(&gb) {
            prop_assert!((x - y).abs() < 1e-9);
        }
        let lse: f64 = log_softmax(&z).iter().map(|v| v.exp()).sum();
        prop_assert!((lse - 1.0).abs() < 1e-12);
    }

    #[test]
    fn manifest_json_round_trips(clips in prop::collection::vec(clip(), 0..20), dim in 1u32..64, views in 1u32..5) {
        let clips = clips.into_iter().enumerate().map(|(i, mut c)| { c.clip_id = format!("id{i}"); c }).collect();
        let m = DatasetManifest { split: Split::Test, feature_dim: dim, views_per_clip: views, clips };
        let back = parse_manifest(&m.to_json().unwrap()).unwrap();
        prop_assert_eq!(m, back);
    }
}
