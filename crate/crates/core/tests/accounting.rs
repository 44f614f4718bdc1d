use edgeface_core::accounting::{count_spec, sweep_csv};
use edgeface_core::{gamma_sweep, EdgeFaceModel, Variant};

const GAMMAS: [f64; 5] = [0.2, 0.4, 0.6, 0.8, 1.0];

#[test]
fn sweep_is_strictly_increasing() {
    for v in Variant::ALL {
        let rows = gamma_sweep(&v.spec(), &GAMMAS).unwrap();
        assert!(rows[0].gamma.is_none());
        for w in rows[1..].windows(2) {
            assert!(w[1].mparams > w[0].mparams && w[1].mflops > w[0].mflops, "{v:?}");
        }
    }
}

#[test]
fn full_ratio_costs_more_than_dense() {
    for v in Variant::ALL {
        let dense = count_spec(&v.spec(), None).unwrap();
        let full = count_spec(&v.spec(), Some(1.0)).unwrap();
        assert!(full.total_params > dense.total_params);
        assert!(full.total_macs > dense.total_macs);
    }
}

#[test]
fn only_linear_rows_depend_on_gamma() {
    let dense = count_spec(&Variant::XSmall.spec(), None).unwrap();
    let low = count_spec(&Variant::XSmall.spec(), Some(0.6)).unwrap();
    assert_eq!(dense.rows.len(), low.rows.len());
    for (a, b) in dense.rows.iter().zip(&low.rows) {
        assert_eq!(a.layer, b.layer);
        let linear = [".fc1", ".fc2", ".qkv", ".proj", "head.fc"].iter().any(|s| a.layer.ends_with(s));
        if !linear {
            assert_eq!(a, b);
        } else {
            assert_ne!(a.params, b.params, "{}", a.layer);
        }
    }
}

#[test]
fn head_row_by_hand() {
    // 192 -> 512 head at gamma 0.6: r = floor(0.6 * 192) = 115
    let r = count_spec(&Variant::XSmall.spec(), Some(0.6)).unwrap();
    let head = r.rows.iter().find(|row| row.layer == "head.fc").unwrap();
    assert_eq!(head.params, 115 * (192 + 512) + 512);
    assert_eq!(head.macs, 115 * (192 + 512));
}

#[test]
fn report_serializations() {
    let r = count_spec(&Variant::XxSmall.spec(), None).unwrap();
    let json: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
    assert_eq!(json["total_params"].as_u64().unwrap(), r.total_params);
    assert_eq!(json["variant"], "XX-SMALL");
    let csv = r.to_csv();
    assert_eq!(csv.lines().count(), r.rows.len() + 1);
    let summed: u64 = csv.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse::<u64>().unwrap()).sum();
    assert_eq!(summed, r.total_params);
    assert!(sweep_csv(&gamma_sweep(&Variant::XxSmall.spec(), &GAMMAS).unwrap()).lines().count() == 7);
}

#[test]
fn census_matches_built_model() {
    for gamma in [None, Some(0.6)] {
        let model = EdgeFaceModel::build(&Variant::XSmall.spec(), gamma, 1).unwrap();
        let r = count_spec(&Variant::XSmall.spec(), gamma).unwrap();
        assert_eq!(r.total_params as usize, model.param_count());
    }
}
