use seismo_core::dataset::{assemble, fit_normalizer, AssembleOptions, Dataset, TargetMode};
use seismo_core::dynamics::{BoucWenParams, DampingSpec, StructureParams};
use seismo_core::excitation::{generate_synthetic, GroundMotion, KanaiTajimiParams, G_ACCEL};
use seismo_core::metrics;
use seismo_core::network::{init_params, CellKind, Model, ModelArch};
use seismo_core::optimizer::{train, TrainConfig};

fn ratio(z: f64) -> DampingSpec { DampingSpec::Ratio { zeta: z } }

fn run_case(seed: u64, n_train_records: usize, levels: &[f64], lr: f64, epochs: usize) {
    let kt = KanaiTajimiParams::default();
    let make = |offset: u64, n: usize| -> Vec<GroundMotion> {
        (0..n as u64)
            .flat_map(|i| {
                let base = generate_synthetic(&kt, 30.0, 0.02, seed * 100_000 + offset + i).unwrap();
                levels.iter().map(|g| base.scale_to_pga(g * G_ACCEL).unwrap()
                    .with_id(format!("{}@{g}g", base.id()))).collect::<Vec<_>>()
            })
            .collect()
    };
    let train_gms = make(0, n_train_records);
    let val_gms = make(1000, 2);
    let test_gms = make(2000, 3);
    let bw = BoucWenParams::default();
    let held = StructureParams::bouc_wen(220.0, 90e3, ratio(0.05), bw).unwrap();
    let mut train_structs = Vec::new();
    for &k in &[70e3, 90e3, 110e3] {
        for &m in &[180.0, 220.0, 260.0] {
            if (k, m) != (90e3, 220.0) {
                train_structs.push(StructureParams::bouc_wen(m, k, ratio(0.05), bw).unwrap());
            }
        }
    }
    let opts = AssembleOptions { seed, ..AssembleOptions::default() };
    let mc_train = assemble(&train_gms, &train_structs, &opts).unwrap();
    let held_slice = [held];
    let val = assemble(&val_gms, &held_slice, &opts).unwrap();
    let test = assemble(&test_gms, &held_slice, &opts).unwrap();
    let gru_train = assemble(&train_gms, &held_slice, &opts).unwrap();
    let norm = fit_normalizer(&mc_train, TargetMode::MinMax).unwrap();
    let mc_train = mc_train.normalized(&norm);
    let val = val.normalized(&norm);
    let test = test.normalized(&norm);
    let gru_train = gru_train.normalized(&norm);

    let r2_of = |model: &Model, ds: &Dataset| {
        let recs = seismo_cli::commands::predict_dataset(model, ds, &norm);
        metrics::build_report(&recs).unwrap().aggregate.r2
    };
    let cfg = TrainConfig { batch_size: 16, max_epochs: epochs, learning_rate: lr, patience: 50, seed, ..TrainConfig::default() };
    let mc = train(init_params(ModelArch::new(CellKind::McGru, 2, 16), seed), &mc_train, &val, &cfg).unwrap();
    let gru = train(init_params(ModelArch::new(CellKind::Gru, 2, 16), seed), &gru_train, &val, &cfg).unwrap();
    println!(
        "seed={seed} recs={n_train_records} levels={levels:?} lr={lr}: MC r2 {:.4} (ep {}), GRU r2 {:.4} (ep {})",
        r2_of(&mc.model, &test), mc.best_epoch, r2_of(&gru.model, &test), gru.best_epoch
    );
}

#[test]
fn probe() {
    run_case(1, 16, &[0.3, 0.6], 2e-3, 300);
    run_case(2, 16, &[0.3, 0.6], 2e-3, 300);
}
