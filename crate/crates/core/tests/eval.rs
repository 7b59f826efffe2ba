use aitsr_core::eval::{
    class_shade, collapse, confusion, metrics, region_report, render_segmentation,
    BinaryCollapseSpec, ConfusionMatrix, Positive,
};
use aitsr_core::ingest::LabelMask;
use aitsr_core::nn::{predict_map, Activation, MlpModel};
use aitsr_core::pgm::GreyImage;
use aitsr_core::tsr::{FeatureImage, LogBase, Packing};
use aitsr_core::LabelMap;
use proptest::prelude::*;

/// Published four-state table (normal, 0.1, 0.2, 0.3 mm).
fn four_state() -> ConfusionMatrix {
    ConfusionMatrix::with_default_names(vec![
        vec![1152, 83, 1, 18],
        vec![61, 1241, 0, 12],
        vec![6, 6, 1377, 11],
        vec![19, 14, 19, 1408],
    ])
    .unwrap()
}

fn pp(x: f64) -> f64 {
    100.0 * x
}

#[test]
fn four_state_accuracy() {
    let cm = four_state();
    assert_eq!((cm.trace(), cm.total()), (5178, 5428));
    let m = metrics(&cm, &Positive::Set(vec![1, 2, 3])).unwrap();
    assert!((pp(m.accuracy) - 95.4).abs() <= 0.1);
}

#[test]
fn any_defect_collapse() {
    let two = collapse(&four_state(), &BinaryCollapseSpec::new("any-defect", vec![1, 2, 3])).unwrap();
    assert_eq!(two.counts, vec![vec![1152, 102], vec![86, 4088]]);
    let m = metrics(&two, &Positive::Class(1)).unwrap();
    assert!((m.accuracy - 0.96536).abs() < 5e-6);
    assert!((m.precision.unwrap() - 0.97566).abs() < 5e-6);
    assert!((m.recall.unwrap() - 0.97940).abs() < 5e-6);
    for (value, published) in [(m.accuracy, 96.5), (m.precision.unwrap(), 97.6), (m.recall.unwrap(), 97.9)] {
        assert!((pp(value) - published).abs() <= 0.1);
    }
}

#[test]
fn thin_gap_acceptable_collapse() {
    let two = collapse(&four_state(), &BinaryCollapseSpec::new("thick-gap", vec![2, 3])).unwrap();
    // summation of the four-state rows gives 2537 (the printed table says 2538)
    assert_eq!(two.counts, vec![vec![2537, 31], vec![45, 2815]]);
    let m = metrics(&two, &Positive::Class(1)).unwrap();
    assert_eq!(m.accuracy, 5352.0 / 5428.0);
    assert_eq!(m.precision, Some(2815.0 / 2846.0));
    assert_eq!(m.recall, Some(2815.0 / 2860.0));
    for (value, published) in [(m.accuracy, 98.6), (m.precision.unwrap(), 98.9), (m.recall.unwrap(), 98.4)] {
        assert!((pp(value) - published).abs() <= 0.1);
    }
}

#[test]
fn confusion_from_labels_reproduces_table() {
    let table = four_state();
    let (mut actual, mut predicted) = (Vec::new(), Vec::new());
    for (a, row) in table.counts.iter().enumerate() {
        for (p, &c) in row.iter().enumerate() {
            actual.extend(std::iter::repeat(a).take(c as usize));
            predicted.extend(std::iter::repeat(p).take(c as usize));
        }
    }
    assert_eq!(confusion(&actual, &predicted, 4).unwrap().counts, table.counts);
}

#[test]
fn segmentation_pgm_golden_bytes() {
    let map = LabelMap {
        width: 3,
        height: 2,
        labels: vec![Some(0), Some(1), Some(2), Some(3), None, Some(0)],
    };
    let img = render_segmentation(&map, 4).unwrap();
    let mut expected = b"P5\n3 2\n255\n".to_vec();
    expected.extend([0, 85, 170, 255, 1, 0]);
    assert_eq!(img.encode(), expected);
    assert_eq!(GreyImage::decode(&expected).unwrap(), img);
}

#[test]
fn zero_model_segments_uniformly() {
    let model = MlpModel::zeros(&[15, 10, 20, 4], &[Activation::Tanh, Activation::Tanh, Activation::Softmax]).unwrap();
    let (w, h) = (6, 4);
    let features = FeatureImage {
        width: w,
        height: h,
        degree: 4,
        packing: Packing::ConcatPadded,
        log_base: LogBase::Ten,
        scaling_pending: false,
        n_features: 15,
        values: (0..w * h * 15).map(|i| (i % 15) as f64 - 7.0).collect(),
        valid: vec![true; w * h],
    };
    let map = predict_map(&model, &features).unwrap();
    assert!(map.labels.iter().all(|l| *l == Some(0)));
    let img = render_segmentation(&map, 4).unwrap();
    assert!(img.pixels.iter().all(|&p| p == 0));
}

#[test]
fn region_report_majorities() {
    let (w, h) = (20, 20);
    let labels: Vec<u8> = (0..w * h).map(|i| (2 * ((i / w) / 10) + (i % w) / 10) as u8).collect();
    let mask = LabelMask::from_labels(w, h, 4, labels.clone()).unwrap();
    let perfect = LabelMap {
        width: w,
        height: h,
        labels: labels.iter().map(|&l| Some(l)).collect(),
    };
    let report = region_report(&perfect, &mask).unwrap();
    assert_eq!(report.len(), 4);
    assert!(report.iter().all(|r| r.fraction_correct == 1.0));

    // 5 of every quadrant's 100 pixels flipped to the next class
    let salted = LabelMap {
        width: w,
        height: h,
        labels: labels
            .iter()
            .enumerate()
            .map(|(i, &l)| {
                let local = (i / w % 10) * 10 + i % w % 10;
                Some(if local % 20 == 7 { (l + 1) % 4 } else { l })
            })
            .collect(),
    };
    for r in region_report(&salted, &mask).unwrap() {
        assert_eq!(r.majority, r.class_id);
        assert!((r.fraction_correct - 0.95).abs() < 1e-12);
    }

    let mut valid = vec![true; w * h];
    for (i, v) in valid.iter_mut().enumerate() {
        if labels[i] == 3 {
            *v = false;
        }
    }
    let partial = LabelMask::new(w, h, 4, labels, valid).unwrap();
    let report = region_report(&perfect, &partial).unwrap();
    assert_eq!(report.iter().map(|r| r.class_id).collect::<Vec<_>>(), vec![0, 1, 2]);
}

#[test]
fn shades_are_injective() {
    for k in 2..=256 {
        let mut shades: Vec<u8> = (0..k).map(|i| class_shade(i, k)).collect();
        shades.sort_unstable();
        shades.dedup();
        assert_eq!(shades.len(), k);
    }
}

fn arb_matrix() -> impl Strategy<Value = ConfusionMatrix> {
    (2usize..6).prop_flat_map(|k| {
        proptest::collection::vec(proptest::collection::vec(0u64..500, k), k)
            .prop_map(|c| ConfusionMatrix::with_default_names(c).unwrap())
    })
}

proptest! {
    #[test]
    fn collapse_preserves_total_and_never_lowers_accuracy(cm in arb_matrix(), bits in 1u32..31) {
        let k = cm.k();
        let positive: Vec<usize> = (0..k).filter(|i| bits >> i & 1 == 1).collect();
        prop_assume!(!positive.is_empty() && positive.len() < k);
        prop_assume!(cm.total() > 0);
        let two = collapse(&cm, &BinaryCollapseSpec::new("p", positive)).unwrap();
        prop_assert_eq!(two.total(), cm.total());
        prop_assert!(two.trace() >= cm.trace());
    }
}
