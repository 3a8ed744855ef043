use ellitrack::accumulate::*;
use ellitrack::events::{Event, EventBin, Polarity};
use proptest::prelude::*;

const W: u16 = 6;
const H: u16 = 5;

/// Time-sorted events on a small grid, plus a window covering them.
fn arb_bin() -> impl Strategy<Value = (Vec<Event>, u64, u64)> {
    (1usize..120, 0u64..5000, 1u64..5000).prop_flat_map(|(n, t0, span)| {
        let ev = (t0..=t0 + span, 0..W, 0..H, any::<bool>()).prop_map(|(t, x, y, p)| {
            Event::new(t, x, y, if p { Polarity::Positive } else { Polarity::Negative })
        });
        proptest::collection::vec(ev, n).prop_map(move |mut v| {
            v.sort_by_key(|e| e.t);
            (v, t0, t0 + span)
        })
    })
}

fn bin(events: &[Event], t0: u64, t1: u64) -> EventBin<'_> {
    EventBin::new(events, t0, t1, W, H).unwrap()
}

fn values(r: &Representation) -> Vec<f64> {
    r.v_pos.as_slice().iter().chain(r.v_neg.as_slice()).copied().collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn causal_ignores_events_after_reference((events, t0, t1) in arb_bin(), frac in 0.0f64..1.0) {
        let b = bin(&events, t0, t1);
        let t_cut = t0 + ((t1 - t0) as f64 * frac) as u64;
        let kept: Vec<Event> = events.iter().copied().filter(|e| e.t <= t_cut).collect();
        let full = accumulate_causal_at(&b, t_cut).unwrap();
        let trunc = accumulate_causal_at(&bin(&kept, t0, t1), t_cut).unwrap();
        prop_assert_eq!(&full, &trunc);
        for mode in [OverflowMode::Skip, OverflowMode::Clip] {
            let f = accumulate_fast_causal_at(&b, t_cut, 2.0, mode).unwrap();
            let t = accumulate_fast_causal_at(&bin(&kept, t0, t1), t_cut, 2.0, mode).unwrap();
            prop_assert_eq!(f, t);
        }
    }

    #[test]
    fn unbounded_limit_equals_causal((events, t0, t1) in arb_bin()) {
        let b = bin(&events, t0, t1);
        let causal = accumulate_causal(&b).unwrap();
        let n = events.len() as f64;
        for mode in [OverflowMode::Skip, OverflowMode::Clip] {
            let fast = accumulate_fast_causal(&b, n, mode).unwrap();
            // bitwise, not approximate
            let bits = |r: &Representation| values(r).iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(&fast), bits(&causal));
        }
    }

    #[test]
    fn limit_is_respected_and_monotone((events, t0, t1) in arb_bin(), l1 in 0.05f64..4.0, dl in 0.0f64..4.0) {
        let b = bin(&events, t0, t1);
        let causal = values(&accumulate_causal(&b).unwrap());
        let lo = values(&accumulate_fast_causal(&b, l1, OverflowMode::Clip).unwrap());
        let hi = values(&accumulate_fast_causal(&b, l1 + dl, OverflowMode::Clip).unwrap());
        let skip = values(&accumulate_fast_causal(&b, l1, OverflowMode::Skip).unwrap());
        for i in 0..causal.len() {
            prop_assert!(lo[i] <= hi[i] && hi[i] <= causal[i]);
            prop_assert!(lo[i] <= l1 && skip[i] <= l1 && skip[i] <= causal[i]);
            prop_assert!(skip[i] >= 0.0 && lo[i] >= 0.0);
        }
    }

    #[test]
    fn causal_values_bounded_by_event_count((events, t0, t1) in arb_bin()) {
        let r = accumulate_causal(&bin(&events, t0, t1)).unwrap();
        prop_assert!(values(&r).iter().all(|&v| v >= 0.0 && v <= events.len() as f64));
    }

    #[test]
    fn negative_events_never_touch_positive_channel((events, t0, t1) in arb_bin(), seed in any::<u64>()) {
        // shuffle only the coordinates of negative events, keeping timestamps
        let negs: Vec<usize> = (0..events.len()).filter(|&i| events[i].p == Polarity::Negative).collect();
        let mut permuted = events.clone();
        let k = negs.len();
        for (j, &i) in negs.iter().enumerate() {
            let src = negs[(j + (seed as usize % k.max(1))) % k.max(1)];
            permuted[i].x = events[src].x;
            permuted[i].y = events[src].y;
        }
        for method in Method::ALL {
            let cfg = AccumulationConfig { method, ..Default::default() };
            let a = accumulate(&bin(&events, t0, t1), &cfg).unwrap();
            let b = accumulate(&bin(&permuted, t0, t1), &cfg).unwrap();
            prop_assert_eq!(a.v_pos, b.v_pos);
        }
    }

    #[test]
    fn causal_is_linear_over_disjoint_sets((events, t0, t1) in arb_bin(), mask in any::<u128>()) {
        let (mut a, mut b) = (Vec::new(), Vec::new());
        for (i, e) in events.iter().enumerate() {
            if mask >> (i % 128) & 1 == 1 { a.push(*e) } else { b.push(*e) }
        }
        let whole = accumulate_causal(&bin(&events, t0, t1)).unwrap();
        let ra = accumulate_causal(&bin(&a, t0, t1)).unwrap();
        let rb = accumulate_causal(&bin(&b, t0, t1)).unwrap();
        let (w, sa, sb) = (values(&whole), values(&ra), values(&rb));
        for i in 0..w.len() {
            prop_assert!((w[i] - sa[i] - sb[i]).abs() <= 1e-12 * (1.0 + w[i]));
        }
    }

    #[test]
    fn volume_at_end_matches_causal((events, t0, t1) in arb_bin()) {
        let b = bin(&events, t0, t1);
        prop_assert_eq!(accumulate_volume(&b, t1).unwrap(), accumulate_causal(&b).unwrap());
    }

    #[test]
    fn normalized_fast_causal_in_unit_range((events, t0, t1) in arb_bin()) {
        let cfg = AccumulationConfig { normalize: true, ..Default::default() };
        let r = accumulate(&bin(&events, t0, t1), &cfg).unwrap();
        prop_assert!(values(&r).iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn fcv_round_trip_is_f32_exact((events, t0, t1) in arb_bin()) {
        let r = accumulate_causal(&bin(&events, t0, t1)).unwrap();
        let back = decode_representation(&encode_representation(&r).unwrap()).unwrap();
        for (a, b) in values(&r).iter().zip(values(&back)) {
            prop_assert_eq!(*a as f32 as f64, b);
        }
    }
}

#[test]
fn skip_mode_drops_whole_events_clip_mode_tops_up() {
    // contributions 0.2, 0.7, 0.9
    let events = [2200, 2700, 2900].map(|t| Event::new(t, 1, 1, Polarity::Positive));
    let b = EventBin::new(&events, 2000, 3000, 4, 4).unwrap();
    let v = |r: Representation| r.v_pos.get(1, 1);
    assert!((v(accumulate_fast_causal(&b, 1.0, OverflowMode::Skip).unwrap()) - 0.9).abs() < 1e-12);
    assert!((v(accumulate_fast_causal(&b, 0.5, OverflowMode::Skip).unwrap()) - 0.2).abs() < 1e-12);
    assert_eq!(v(accumulate_fast_causal(&b, 0.5, OverflowMode::Clip).unwrap()), 0.5);
    assert!((v(accumulate_fast_causal(&b, 10.0, OverflowMode::Skip).unwrap()) - 1.8).abs() < 1e-12);
}
