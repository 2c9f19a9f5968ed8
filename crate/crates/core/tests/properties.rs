use proptest::prelude::*;

use extremeseg::geometry::{box_from_points, extreme_points_from_mask, tight_box};
use extremeseg::objective::iou;
use extremeseg::raster::{resize_bilinear, rle_decode, rle_encode, BinaryMask, Raster};
use extremeseg::Tensor;

fn mask() -> impl Strategy<Value = BinaryMask> {
    (1usize..20, 1usize..20).prop_flat_map(|(w, h)| {
        proptest::collection::vec(0u8..2, w * h)
            .prop_map(move |bits| BinaryMask::from_bits(w, h, bits).unwrap())
    })
}

fn tensor(c: usize, h: usize, w: usize) -> impl Strategy<Value = Tensor> {
    proptest::collection::vec(-10.0f64..10.0, c * h * w)
        .prop_map(move |d| Tensor::from_vec(&[c, h, w], d).unwrap())
}

proptest! {
    #[test]
    fn rle_round_trip(m in mask()) {
        let rle = rle_encode(&m);
        prop_assert!(rle.is_valid());
        prop_assert_eq!(rle_decode(&rle).unwrap(), m);
    }

    #[test]
    fn pnm_round_trip(w in 1usize..9, h in 1usize..9, c in prop_oneof![Just(1usize), Just(3usize)], seed in any::<u64>()) {
        let data: Vec<u8> = (0..w * h * c).map(|i| (seed.wrapping_mul(i as u64 + 1) >> 7) as u8).collect();
        let r = Raster::new(w, h, c, data).unwrap();
        prop_assert_eq!(Raster::from_pnm_bytes(&r.to_pnm_bytes()).unwrap(), r);
    }

    #[test]
    fn bilinear_is_linear(
        (a, b) in (1usize..6, 1usize..6).prop_flat_map(|(h, w)| (tensor(2, h, w), tensor(2, h, w))),
        oh in 1usize..12, ow in 1usize..12, s in -3.0f64..3.0,
    ) {
        let mix: Vec<f64> = a.data().iter().zip(b.data()).map(|(x, y)| x + s * y).collect();
        let mix = Tensor::from_vec(a.shape(), mix).unwrap();
        let ra = resize_bilinear(&a, oh, ow).unwrap();
        let rb = resize_bilinear(&b, oh, ow).unwrap();
        let rm = resize_bilinear(&mix, oh, ow).unwrap();
        for ((x, y), z) in ra.data().iter().zip(rb.data()).zip(rm.data()) {
            prop_assert!((x + s * y - z).abs() < 1e-9);
        }
    }

    #[test]
    fn bilinear_preserves_constants(h in 1usize..8, w in 1usize..8, oh in 1usize..16, ow in 1usize..16, v in -5.0f64..5.0) {
        let t = Tensor::from_vec(&[1, h, w], vec![v; h * w]).unwrap();
        for x in resize_bilinear(&t, oh, ow).unwrap().data() {
            prop_assert!((x - v).abs() < 1e-12);
        }
    }

    #[test]
    fn iou_symmetric_and_bounded(a in mask(), seed in any::<u64>()) {
        let bits: Vec<u8> = (0..a.bits().len()).map(|i| ((seed >> (i % 64)) & 1) as u8).collect();
        let b = BinaryMask::from_bits(a.width(), a.height(), bits).unwrap();
        let x = iou(&a, &b).unwrap();
        prop_assert_eq!(x, iou(&b, &a).unwrap());
        prop_assert!((0.0..=1.0).contains(&x));
        prop_assert_eq!(iou(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn extreme_points_span_tight_box(m in mask()) {
        prop_assume!(!m.is_empty());
        let p = extreme_points_from_mask(&m).unwrap();
        prop_assert_eq!(Some(box_from_points(&p)), tight_box(&m));
        for q in p.corners() {
            prop_assert!(m.get(q.x as usize, q.y as usize));
        }
    }
}
