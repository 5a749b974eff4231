use entroflow::io::{read_measure, read_values, write_measure, write_values};
use entroflow::*;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn measure_round_trip_is_bit_exact(
        dim in 1usize..=2,
        p in 1usize..12,
        raw in prop::collection::vec(prop_oneof![Just(0.0), 1e-300f64..1.0, 1e-10f64..1e10], 144),
    ) {
        let g = Grid::unit(dim, p).unwrap();
        let mut w = raw[..g.len()].to_vec();
        w[0] += 1.0;
        let rho = DiscreteMeasure::normalized(g, w).unwrap();
        let mut buf = Vec::new();
        write_measure(&mut buf, &rho).unwrap();
        let back = read_measure(buf.as_slice()).unwrap();
        prop_assert_eq!(back.grid(), rho.grid());
        prop_assert_eq!(back.weights(), rho.weights());
    }

    #[test]
    fn values_round_trip_on_shifted_grids(
        lo in -5.0f64..5.0,
        width in 0.1f64..10.0,
        p in 2usize..40,
        vals in prop::collection::vec(-1e6f64..1e6, 40),
    ) {
        let g = Grid::from_axes(&[(lo, lo + width, p)]).unwrap();
        let mut buf = Vec::new();
        write_values(&mut buf, &g, "v", &vals[..p]).unwrap();
        let (g2, v2) = read_values(buf.as_slice()).unwrap();
        prop_assert_eq!(&v2[..], &vals[..p]);
        prop_assert_eq!(g2.len(), p);
        for i in 0..p {
            prop_assert!((g2.point(i)[0] - g.point(i)[0]).abs() < 1e-9 * width.max(1.0));
        }
    }
}

#[test]
fn files_round_trip() {
    let dir = std::env::temp_dir().join(format!("entroflow-io-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let g = Grid::unit(2, 5).unwrap();
    let rho = DiscreteMeasure::from_density(g, |x| 1.0 + x[0] - x[1] * x[1]).unwrap();
    let path = dir.join("rho.csv");
    io::save_measure(&path, &rho).unwrap();
    assert_eq!(io::load_measure(&path).unwrap(), rho);
    assert!(matches!(
        io::load_measure(&dir.join("missing.csv")),
        Err(Error::Io(_))
    ));
    std::fs::remove_dir_all(&dir).unwrap();
}
