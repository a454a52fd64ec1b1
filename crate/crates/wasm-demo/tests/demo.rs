use arrayssl_wasm::Demo;

#[test]
fn views_have_expected_sizes() {
    let d = Demo::new(3, 2, 8, 128).unwrap();
    assert_eq!((d.time(), d.bins(), d.antennas()), (8, 128, 4));
    assert_eq!(d.spectrogram(0).unwrap().len(), 8 * 128);
    assert_eq!(d.bandwidth_target().unwrap().len(), 128);
    assert_eq!(d.labels().len(), 4);
    assert_eq!(d.masked_input(1).unwrap().len(), 8 * 8 * 128);
    assert!(d.spectrogram(4).is_err());
    assert!(d.masked_input(4).is_err());
}

#[test]
fn target_matches_labels() {
    let d = Demo::new(11, 3, 4, 256).unwrap();
    let target = d.bandwidth_target().unwrap();
    let labels = d.labels();
    for pair in labels.chunks(2) {
        let (lo, hi) = (pair[0] as usize, pair[1] as usize);
        let center = (lo + hi) / 2;
        assert_eq!(target[center], (hi - lo) as f32 / 256.0);
    }
    assert_eq!(target.iter().filter(|&&v| v != 0.0).count(), labels.len() / 2);
}

#[test]
fn masked_pair_is_zero_and_rest_is_not() {
    let d = Demo::new(5, 1, 4, 64).unwrap();
    let x = d.masked_input(2).unwrap();
    let plane = 4 * 64;
    for c in 0..8 {
        let ch = &x[c * plane..(c + 1) * plane];
        assert_eq!(ch.iter().all(|&v| v == 0.0), c == 4 || c == 5, "channel {c}");
    }
}

#[test]
fn same_seed_same_views() {
    let a = Demo::new(9, 4, 8, 64).unwrap();
    let b = Demo::new(9, 4, 8, 64).unwrap();
    assert_eq!(a.spectrogram(3).unwrap(), b.spectrogram(3).unwrap());
    assert_eq!(a.labels(), b.labels());
}

#[test]
fn rejects_bad_geometry() {
    assert!(Demo::new(0, 2, 8, 0).is_err());
    assert!(Demo::new(0, 2, 0, 64).is_err());
}

#[test]
fn noise_only_frame_has_empty_target() {
    let d = Demo::new(1, 0, 8, 64).unwrap();
    assert!(d.labels().is_empty());
    assert!(d.bandwidth_target().unwrap().iter().all(|&v| v == 0.0));
}
