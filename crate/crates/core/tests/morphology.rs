use proptest::prelude::*;
use pupiltrack::morphology::{close, dilate, erode, open, preprocess, Shape, StructuringElement};
use pupiltrack::GrayImage;

fn brute(img: &GrayImage, se: &StructuringElement, min: bool) -> GrayImage {
    let offsets = se.offsets();
    GrayImage::from_fn(img.width(), img.height(), |x, y| {
        let vals = offsets.iter().map(|&(dx, dy)| img.get_clamped(x as isize + dx, y as isize + dy));
        if min {
            vals.min().unwrap()
        } else {
            vals.max().unwrap()
        }
    })
    .unwrap()
}

fn image() -> impl Strategy<Value = GrayImage> {
    (1usize..24, 1usize..24).prop_flat_map(|(w, h)| {
        proptest::collection::vec(any::<u8>(), w * h).prop_map(move |data| GrayImage::new(w, h, data).unwrap())
    })
}

fn element() -> impl Strategy<Value = StructuringElement> {
    (prop_oneof![Just(Shape::Disk), Just(Shape::Square)], 0usize..5)
        .prop_map(|(shape, r)| StructuringElement::new(shape, r))
}

fn le(a: &GrayImage, b: &GrayImage) -> bool {
    a.as_slice().iter().zip(b.as_slice()).all(|(x, y)| x <= y)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 128, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn matches_brute_force(img in image(), se in element()) {
        prop_assert_eq!(erode(&img, &se), brute(&img, &se, true));
        prop_assert_eq!(dilate(&img, &se), brute(&img, &se, false));
        prop_assert_eq!(open(&img, &se), brute(&brute(&img, &se, true), &se, false));
        prop_assert_eq!(close(&img, &se), brute(&brute(&img, &se, false), &se, true));
    }

    #[test]
    fn ordering_and_extensivity(img in image(), se in element()) {
        let (e, d, o, c) = (erode(&img, &se), dilate(&img, &se), open(&img, &se), close(&img, &se));
        prop_assert!(le(&e, &o) && le(&o, &img) && le(&img, &c) && le(&c, &d));
    }

    #[test]
    fn duality_under_inversion(img in image(), se in element()) {
        prop_assert_eq!(erode(&img, &se), dilate(&img.inverted(), &se).inverted());
        prop_assert_eq!(open(&img, &se), close(&img.inverted(), &se).inverted());
    }

    #[test]
    fn opening_and_closing_are_idempotent(img in image(), se in element()) {
        let o = open(&img, &se);
        prop_assert_eq!(open(&o, &se), o);
        let c = close(&img, &se);
        prop_assert_eq!(close(&c, &se), c);
    }

    #[test]
    fn preprocess_is_open_of_close(img in image(), a in element(), b in element()) {
        prop_assert_eq!(preprocess(&img, &a, &b), open(&close(&img, &a), &b));
    }
}
