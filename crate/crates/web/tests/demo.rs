use pase_web::{receptive_window, sinc_band, sinc_response, spc_draw, tone_features};

#[test]
fn passband_sits_between_the_cutoffs() {
    let r = sinc_response(1000.0, 500.0, 251, 801);
    // 10 Hz per point
    assert!(r[125] > -1.0, "centre {:.2} dB", r[125]);
    assert!(r[20] < -40.0 && r[400] < -40.0);
    assert_eq!(sinc_band(1000.0, 500.0), vec![1000.0, 1550.0]);
}

#[test]
fn tone_features_have_target_shapes() {
    for (kind, dims) in [("lps", 1025), ("mfcc", 20), ("prosody", 4)] {
        let f = tone_features(kind, 120.0, 120.0, 5, 0.5).unwrap();
        assert_eq!((f.frames(), f.dims()), (50, dims));
        assert_eq!(f.data().len(), 50 * dims);
    }
    assert!(tone_features("mel", 120.0, 120.0, 5, 0.5).is_none());
    let p = tone_features("prosody", 150.0, 150.0, 3, 1.0).unwrap();
    let f0 = p.data()[50 * 4].exp();
    assert!((f0 - 150.0).abs() < 3.0, "{f0}");
}

#[test]
fn spc_windows_straddle_the_anchor() {
    for seed in 0..200 {
        let d = spc_draw(seed, 100);
        let (t, ps, pl, ns, nl) = (d[0], d[1], d[2], d[3], d[4]);
        assert!(ps > t && ps - t >= 15 && ps + pl - 1 - t <= 50);
        assert!(ns + nl - 1 < t && t - ns <= 50 && t - (ns + nl - 1) >= 15);
    }
    assert!(spc_draw(0, 20).is_empty());
}

#[test]
fn receptive_window_spans_2370_samples() {
    let w = receptive_window(50, 16_000);
    assert_eq!(w[1] - w[0], 2370);
    assert!(w[0] < 8000 && w[1] > 8160);
}
