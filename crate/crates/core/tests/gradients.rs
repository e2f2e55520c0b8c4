use embcomp::data::Batch;
use embcomp::model::{check_gradients, DlrmLite, DlrmShape};
use embcomp::posttrain::{DedupCodec, LshParams, MagPqCodec, PqCodec};
use embcomp::stores::{
    AdaptiveTable, AlptTable, CompoTable, DoubleHashTable, EmbeddingStore, FullTable, GatherStore,
    InitConfig, MemComTable, MixedDimTable, PrunedTable, QuantBits, QuantRange, QuantizedTable,
    RobeArray, Rounding, TtRecTable, TtShape,
};
use embcomp::{Codec, DenseMatrix, FeatureSpace};
use rand::Rng;

const N: usize = 40;
const D: usize = 4;

fn init() -> InitConfig {
    InitConfig { seed: 17, scale: 0.5 }
}

fn batch() -> Batch<f64> {
    let mut rng = embcomp::rng::seeded(5, 0);
    let rows = 6;
    let mut ids = Vec::new();
    for _ in 0..rows {
        ids.push(rng.random_range(0..20u32));
        ids.push(rng.random_range(20..40u32));
    }
    let dense = (0..rows * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
    Batch {
        ids,
        dense: DenseMatrix::from_vec(rows, 3, dense).unwrap(),
        labels: (0..rows).map(|i| (i % 2) as f64).collect(),
    }
}

fn warm_matrix() -> DenseMatrix<f32> {
    let mut rng = embcomp::rng::seeded(8, 0);
    let v = (0..N * D).map(|_| rng.random_range(-0.5f32..0.5)).collect();
    DenseMatrix::from_vec(N, D, v).unwrap()
}

fn gather(codec: Box<dyn Codec>) -> Box<dyn EmbeddingStore<f64>> {
    Box::new(GatherStore::<f64>::new(codec.into_gather().expect("gather codec")))
}

pub fn all_stores() -> Vec<Box<dyn EmbeddingStore<f64>>> {
    let i = init();
    let space = FeatureSpace::new(vec![20, 20]).unwrap();
    let mut pruned = PrunedTable::<f64>::new(N, D, 90, i).unwrap();
    pruned.prune_to(100);
    let mut adaptive = AdaptiveTable::<f64>::new(N, D, 8, 10, 2, 3, i).unwrap();
    adaptive.observe(&[1, 1, 25, 25, 25, 7]).unwrap();
    let m = warm_matrix();
    let lsh = LshParams { projections: 4, bucket_width: 0.5, seed: 2 };
    vec![
        Box::new(FullTable::<f64>::new(N, D, i)),
        Box::new(DoubleHashTable::<f64>::new(N, D, 7, 3, i).unwrap()),
        Box::new(CompoTable::<f64>::new(N, D, 7, 6, i).unwrap()),
        Box::new(MemComTable::<f64>::new(N, D, 10, 3, i).unwrap()),
        Box::new(RobeArray::<f64>::new(N, D, 30, 2, 3, i).unwrap()),
        Box::new(TtRecTable::<f64>::new(N, TtShape::balanced(N, D, 3, 2).unwrap(), i).unwrap()),
        Box::new(
            QuantizedTable::<f64>::new(N, D, QuantBits::I16, QuantRange::Fixed(1.0), Rounding::Stochastic, i)
                .unwrap(),
        ),
        Box::new(AlptTable::<f64>::new(N, D, QuantBits::I16, 1.0, i).unwrap()),
        Box::new(MixedDimTable::<f64>::new(space, D, vec![2, 4], i).unwrap()),
        Box::new(pruned),
        Box::new(adaptive),
        gather(Box::new(PqCodec::fit(&m, 2, 8, 1).unwrap())),
        gather(Box::new(MagPqCodec::fit(&m, 2, 8, 2, 1).unwrap())),
        gather(Box::new(DedupCodec::fit(&m, 2, lsh).unwrap())),
    ]
}

#[test]
fn every_store_passes_the_finite_difference_check() {
    let b = batch();
    let shape = DlrmShape { fields: 2, dim: D, dense_width: 3, hidden: 5 };
    for mut store in all_stores() {
        let mut model = DlrmLite::<f64>::new(shape, 4).unwrap();
        let check = check_gradients(&mut model, store.as_mut(), &b, 1e-6).unwrap();
        assert!(
            check.max_rel_error < 1e-4,
            "{}: {} ({} checked)",
            store.name(),
            check.worst,
            check.checked
        );
    }
}
