//! Cross-checks of the evaluation stack against the brute-force references.

use gamma_core::Seed;

use gamma::boxes::Box2;
use gamma::data::{synth_domain_pair, underwater_style};
use gamma::detector::nms::nms;
use gamma::metrics::{average_precision, embed_images, fid, fit_gaussian, iou, EmbedEncoder};
use gamma::testkit::{random_ap_instance, random_box, reference_ap, reference_iou, reference_nms};

#[test]
fn iou_matches_reference_and_is_scale_invariant() {
    let mut rng = Seed(60).rng();
    for _ in 0..500 {
        let a = random_box(&mut rng, 100.0);
        let b = random_box(&mut rng, 100.0);
        let got = iou(&a, &b).unwrap();
        assert!((got - reference_iou(&a, &b)).abs() < 1e-12);
        let got_rev = iou(&b, &a).unwrap();
        assert!((got - got_rev).abs() < 1e-12);
        let s = rng.uniform_in(0.1, 10.0);
        let scaled = iou(&a.scaled(s), &b.scaled(s)).unwrap();
        assert!((got - scaled).abs() < 1e-12);
    }
}

#[test]
fn nms_matches_reference_on_random_instances() {
    let mut rng = Seed(61).rng();
    for case in 0..200 {
        let n = 1 + rng.uniform_usize(50);
        let dets: Vec<(Box2, f64)> = (0..n)
            .map(|_| (random_box(&mut rng, 60.0), rng.uniform_in(0.0, 1.0)))
            .collect();
        let thr = rng.uniform_in(0.2, 0.8);
        let got = nms(&dets, thr).unwrap();
        let want = reference_nms(&dets, thr);
        assert_eq!(got, want, "case {case} with {n} boxes at {thr}");
    }
}

#[test]
fn average_precision_matches_reference() {
    let mut rng = Seed(62).rng();
    for case in 0..300 {
        let (dets, gts) = random_ap_instance(&mut rng, 50.0, 6, 20);
        let got = average_precision(&dets, &gts, 0.5).unwrap();
        let want = reference_ap(&dets, &gts, 0.5);
        match (got.ap, want) {
            (None, None) => {}
            (Some(a), Some(b)) => {
                assert!((a - b).abs() < 1e-12, "case {case}: {a} vs {b}")
            }
            other => panic!("case {case}: {other:?}"),
        }
    }
}

#[test]
fn average_precision_depends_only_on_ranks() {
    let mut rng = Seed(63).rng();
    for _ in 0..50 {
        let (dets, gts) = random_ap_instance(&mut rng, 50.0, 5, 15);
        if gts.is_empty() {
            continue;
        }
        let base = average_precision(&dets, &gts, 0.5).unwrap().ap;
        // strictly monotone transforms of the confidences
        let squashed: Vec<(Box2, f64)> =
            dets.iter().map(|&(b, c)| (b, c.atan())).collect();
        let stretched: Vec<(Box2, f64)> =
            dets.iter().map(|&(b, c)| (b, 3.0 * c + 11.0)).collect();
        assert_eq!(base, average_precision(&squashed, &gts, 0.5).unwrap().ap);
        assert_eq!(base, average_precision(&stretched, &gts, 0.5).unwrap().ap);
    }
}

#[test]
fn fid_separates_domains_better_than_halves() {
    let (x, y) = synth_domain_pair(Seed(64), 60, 60, 48).unwrap();
    let encoder = EmbedEncoder::new(Seed(65));
    let ex = embed_images(&x.images, &encoder).unwrap();
    let ey = embed_images(&y.images, &encoder).unwrap();
    let x_first = fit_gaussian(&ex[..30]).unwrap();
    let x_second = fit_gaussian(&ex[30..]).unwrap();
    let x_all = fit_gaussian(&ex).unwrap();
    let y_all = fit_gaussian(&ey).unwrap();
    let within = fid(&x_first, &x_second).unwrap();
    let across = fid(&x_all, &y_all).unwrap();
    assert!(
        within < across,
        "within-domain {within:.4} should be below cross-domain {across:.4}"
    );
    assert!(across > 4.0 * within, "separation too weak: {within:.4} vs {across:.4}");
}

#[test]
fn deterministic_restyle_shrinks_fid_to_target_domain() {
    // the underwater restyle is the reference point for what a good
    // learned translation should beat or approach
    let (x, y) = synth_domain_pair(Seed(66), 40, 40, 48).unwrap();
    let encoder = EmbedEncoder::new(Seed(67));
    let styled: Vec<_> =
        x.images.iter().map(|img| underwater_style(img, 0.9).unwrap()).collect();
    let ex = embed_images(&x.images, &encoder).unwrap();
    let es = embed_images(&styled, &encoder).unwrap();
    let ey = embed_images(&y.images, &encoder).unwrap();
    let fid_raw = fid(&fit_gaussian(&ey).unwrap(), &fit_gaussian(&ex).unwrap()).unwrap();
    let fid_styled = fid(&fit_gaussian(&ey).unwrap(), &fit_gaussian(&es).unwrap()).unwrap();
    assert!(
        fid_styled < 0.5 * fid_raw,
        "restyle should at least halve the distance: {fid_styled:.4} vs {fid_raw:.4}"
    );
}
