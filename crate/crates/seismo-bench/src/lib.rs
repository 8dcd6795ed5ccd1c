//! Shared input builders for the criterion benchmarks.

use seismo_core::dataset::{ChannelRange, Normalizer, TargetMode};
use seismo_core::dynamics::{BoucWenParams, DampingSpec, StructureParams};
use seismo_core::excitation::{generate_synthetic, GroundMotion, KanaiTajimiParams};
use seismo_core::network::{init_params, CellKind, Model, ModelArch};

pub fn bench_record(seed: u64) -> GroundMotion {
    generate_synthetic(&KanaiTajimiParams::default(), 30.0, 0.02, seed)
        .unwrap()
        .scale_to_pga(0.6 * 9.81)
        .unwrap()
}

pub fn linear_structure() -> StructureParams {
    StructureParams::linear(180.0, 45_000.0, DampingSpec::Ratio { zeta: 0.05 }).unwrap()
}

pub fn bouc_wen_structure() -> StructureParams {
    StructureParams::bouc_wen(
        180.0,
        45_000.0,
        DampingSpec::Ratio { zeta: 0.05 },
        BoucWenParams::default(),
    )
    .unwrap()
}

pub fn bench_model(hidden: usize) -> Model {
    init_params(ModelArch::new(CellKind::McGru, 2, hidden), 3)
}

/// A normalizer with plausible ranges for benchmark inputs.
pub fn bench_normalizer() -> Normalizer {
    Normalizer {
        gm: ChannelRange {
            min: -10.0,
            max: 10.0,
        },
        stiffness: ChannelRange {
            min: 30e3,
            max: 65e3,
        },
        mass: ChannelRange {
            min: 120.0,
            max: 240.0,
        },
        target: ChannelRange {
            min: -0.05,
            max: 0.05,
        },
        target_mode: TargetMode::MinMax,
    }
}
