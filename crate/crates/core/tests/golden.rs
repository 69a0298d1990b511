use std::collections::BTreeMap;

use hazardpipe_core::domain::{GeoPoint, HazardClass, ReportId};
use hazardpipe_core::explain::{overlay, CamHeatmap};
use hazardpipe_core::report::{gazetteer_name, render_template, severity, ReportFacts, SeverityThresholds, SiteFacts};
use image::{Rgb, RgbImage};
use proptest::prelude::*;

/// 8 px checkerboard: 1.0 on even squares, 0.375 on odd ones.
fn checkerboard(w: u32, h: u32) -> CamHeatmap {
    let values = (0..h)
        .flat_map(|y| (0..w).map(move |x| if (x / 8 + y / 8) % 2 == 0 { 1.0 } else { 0.375 }))
        .collect();
    CamHeatmap::from_pixels(w, h, values)
}

#[test]
fn checkerboard_overlay_matches_golden_image() {
    let base = RgbImage::from_pixel(64, 48, Rgb([128, 128, 128]));
    let got = overlay(&base, &checkerboard(64, 48), 0.4).unwrap();
    let want = image::load_from_memory(include_bytes!("golden/overlay_checkerboard.png"))
        .unwrap()
        .to_rgb8();
    assert_eq!(got.dimensions(), want.dimensions());
    for (x, y, p) in got.enumerate_pixels() {
        assert_eq!(p, want.get_pixel(x, y), "pixel ({x}, {y})");
    }
}

fn single_plastic_foil() -> ReportFacts {
    let summary = BTreeMap::from([(HazardClass::PlasticFoil, 1)]);
    let location = GeoPoint::new(39.57, 2.65).unwrap();
    ReportFacts {
        report_ids: vec![ReportId::new("rep-00000001")],
        place_name: gazetteer_name(&location).map(str::to_owned),
        location,
        site: None,
        severity: severity(&summary, None, SeverityThresholds::default()).unwrap(),
        hazard_summary: summary,
        n_confirmed: 1,
        language: "en".into(),
        tone: "neutral".into(),
    }
}

#[test]
fn single_detection_template_matches_golden_text() {
    let facts = single_plastic_foil();
    let text = render_template(&facts);
    assert_eq!(text, include_str!("golden/single_plastic_foil.txt"));
    assert_eq!(render_template(&facts).as_bytes(), text.as_bytes());
}

fn summary() -> impl Strategy<Value = BTreeMap<HazardClass, u32>> {
    prop::collection::btree_map(prop::sample::select(HazardClass::ALL.to_vec()), 1..40u32, 1..=5)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 500, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn template_names_each_present_class_once(
        s in summary(),
        with_site in any::<bool>(),
        lat in 39.2..40.0f64,
        lon in 2.3..3.4f64,
    ) {
        let location = GeoPoint::new(lat, lon).unwrap();
        let total: u32 = s.values().sum();
        let site = with_site.then(|| SiteFacts { id: "site-003".into(), n_cells: 2, total_count: total as u64 });
        let facts = ReportFacts {
            report_ids: vec![ReportId::new("rep-00000007"), ReportId::new("rep-00000009")],
            place_name: gazetteer_name(&location).map(str::to_owned),
            location,
            severity: severity(&s, None, SeverityThresholds::default()).unwrap(),
            site,
            hazard_summary: s.clone(),
            n_confirmed: total,
            language: "en".into(),
            tone: "neutral".into(),
        };
        let text = render_template(&facts);
        for c in HazardClass::ALL {
            let n = text.matches(&c.display_name()).count();
            prop_assert_eq!(n, usize::from(s.contains_key(&c)), "{} in {}", c.display_name(), text);
        }
        prop_assert_eq!(render_template(&facts), text);
    }
}
