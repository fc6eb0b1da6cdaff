use drape_core::automask::{
    mask_for_addition, mask_for_recolor, mask_for_removal, mask_for_replacement, AutomaskError, SourceProvenance,
};
use drape_core::backend::mock::synthetic;
use drape_core::backend::{BackendError, Capability, Matter};
use drape_core::config::EngineConfig;
use drape_core::engine::Engine;
use drape_core::imaging::encode_rgb_png;
use drape_core::mask::{AlphaMatte, BinaryMask};
use drape_core::planner::{Category, EditRequest};
use drape_core::store::ContentHash;
use proptest::prelude::*;

struct FixedMatte(AlphaMatte);

impl Matter for FixedMatte {
    fn matte(&self, _image: &ContentHash) -> Result<AlphaMatte, BackendError> {
        Ok(self.0.clone())
    }
}

fn dummy_ref() -> ContentHash {
    ContentHash::of(b"image")
}

/// Pixel-by-pixel square-window dilation.
fn naive_dilate(m: &BinaryMask, r: u32) -> BinaryMask {
    let (w, h) = m.dims();
    let r = r as i64;
    BinaryMask::from_fn(w, h, |x, y| {
        (-r..=r).any(|dy| {
            (-r..=r).any(|dx| {
                let (sx, sy) = (x as i64 + dx, y as i64 + dy);
                sx >= 0 && sy >= 0 && sx < w as i64 && sy < h as i64 && m.get(sx as u32, sy as u32)
            })
        })
    })
    .unwrap()
}

fn naive_or(ms: &[&BinaryMask]) -> BinaryMask {
    let (w, h) = ms[0].dims();
    BinaryMask::from_fn(w, h, |x, y| ms.iter().any(|m| m.get(x, y))).unwrap()
}

fn masks(n: usize) -> impl Strategy<Value = (u32, u32, Vec<Vec<bool>>)> {
    (1u32..24, 1u32..24).prop_flat_map(move |(w, h)| {
        let len = (w * h) as usize;
        (
            Just(w),
            Just(h),
            prop::collection::vec(prop::collection::vec(prop::bool::weighted(0.15), len), n),
        )
    })
}

fn build(w: u32, h: u32, bits: &[bool]) -> BinaryMask {
    BinaryMask::from_bits(w, h, bits.to_vec()).unwrap()
}

proptest! {
    #[test]
    fn recolor_stays_inside_the_source((w, h, bits) in masks(1), alpha in prop::collection::vec(0.0f32..=1.0, 576)) {
        let m_o = build(w, h, &bits[0]);
        let matte = AlphaMatte::new(w, h, alpha[..(w * h) as usize].to_vec()).unwrap();
        match mask_for_recolor(&dummy_ref(), &m_o, &FixedMatte(matte.clone()), 0.5) {
            Ok(m) => {
                prop_assert!(m.is_subset_of(&m_o));
                for y in 0..h {
                    for x in 0..w {
                        prop_assert_eq!(m.get(x, y), m_o.get(x, y) && matte.get(x, y) >= 0.5);
                    }
                }
            }
            Err(AutomaskError::EmptyMask) => prop_assert!(m_o.is_empty()),
            Err(AutomaskError::DegenerateMask) => {
                prop_assert!((0..h).all(|y| (0..w).all(|x| !(m_o.get(x, y) && matte.get(x, y) >= 0.5))));
            }
            Err(e) => prop_assert!(false, "unexpected {e}"),
        }
    }

    #[test]
    fn opaque_matte_recolors_the_whole_source((w, h, bits) in masks(1)) {
        let m_o = build(w, h, &bits[0]);
        prop_assume!(!m_o.is_empty());
        let ones = AlphaMatte::filled(w, h, 1.0).unwrap();
        prop_assert_eq!(mask_for_recolor(&dummy_ref(), &m_o, &FixedMatte(ones), 0.5).unwrap(), m_o);
    }

    #[test]
    fn replacement_covers_removal((w, h, bits) in masks(3), r in 0u32..5) {
        let m_o = build(w, h, &bits[0]);
        prop_assume!(!m_o.is_empty());
        let occ = [build(w, h, &bits[1]), build(w, h, &bits[2])];
        let occ: Vec<&BinaryMask> = occ.iter().collect();
        let removal = mask_for_removal(&m_o, r).unwrap();
        let replacement = mask_for_replacement(&m_o, &occ, r).unwrap();
        prop_assert_eq!(&removal, &naive_dilate(&m_o, r));
        prop_assert!(removal.is_subset_of(&replacement));
        let mut all = vec![&m_o];
        all.extend(&occ);
        prop_assert_eq!(&replacement, &naive_dilate(&naive_or(&all), r));
        prop_assert_eq!(mask_for_replacement(&m_o, &[], r).unwrap(), removal);
    }

    #[test]
    fn addition_needs_a_place((w, h, bits) in masks(2), r in 0u32..5) {
        let occ = [build(w, h, &bits[0]), build(w, h, &bits[1])];
        let refs: Vec<&BinaryMask> = occ.iter().collect();
        match mask_for_addition(&refs, r, "scarf") {
            Ok(m) => prop_assert_eq!(m, naive_dilate(&naive_or(&refs), r)),
            Err(AutomaskError::PlacementNotFound(item)) => {
                prop_assert_eq!(item, "scarf");
                prop_assert!(occ.iter().all(BinaryMask::is_empty));
            }
            Err(e) => prop_assert!(false, "unexpected {e}"),
        }
    }
}

#[test]
fn addition_without_parts_fails() {
    assert!(matches!(
        mask_for_addition(&[], 3, "halo"),
        Err(AutomaskError::PlacementNotFound(_))
    ));
}

#[test]
fn segmenter_only_runs_on_a_lookup_miss() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = EngineConfig::mock(dir.path());
    cfg.planner.seed = Some(1);
    let engine = Engine::open(cfg).unwrap();
    let image = engine
        .store()
        .put(&encode_rgb_png(&synthetic::photo(256, 320).unwrap()).unwrap())
        .unwrap();
    let seg_calls = || engine.gateway().unwrap().call_count(Capability::OpenVocabSeg);
    let run = |text: &str| {
        let report = engine
            .planner(None)
            .execute_plan(&EditRequest {
                text: text.into(),
                image_ref: image.clone(),
            })
            .unwrap();
        assert!(report.failure.is_none(), "{text}: {:?}", report.failure);
        report.results.into_iter().next().unwrap()
    };

    let hit = run("remove the pants");
    assert_eq!(hit.plan.source_provenance(), SourceProvenance::CosegLookup);
    assert_eq!(seg_calls(), 0);

    let miss = run("remove the necklace");
    assert_eq!(miss.task.category, Category::Removal);
    assert_eq!(miss.plan.source_provenance(), SourceProvenance::OpenVocabFallback);
    assert!(seg_calls() >= 1);
}
