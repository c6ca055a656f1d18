//! Dense numerical core: embeddings, link-wise modules, the predictor head,
//! reverse-mode gradients, the optimizer and a finite-difference checker.

pub mod adam;
pub mod checkpoint;
pub mod embedding;
pub mod gradcheck;
pub mod layer;
pub mod link;
pub mod loss;
pub mod matrix;
pub mod params;
pub mod predictor;
pub mod tape;

pub use adam::{Adam, AdamConfig};
pub use embedding::EmbeddingTable;
pub use gradcheck::{finite_difference_check, GradCheckConfig, GradCheckReport};
pub use layer::{Activation, DenseLayer};
pub use link::{compose_forward, module_forward, CompositionOrder, LinkModule, LinkModuleSet};
pub use loss::{propagation_loss, record_objective, supervised_loss, ObjectiveVars, SupervisedBatch};
pub use matrix::{argmax, softmax_rows, Matrix};
pub use params::{ParamStore, Parameters};
pub use predictor::Predictor;
pub use tape::{Gradients, ParamId, Tape, Var};

#[cfg(test)]
#[allow(clippy::needless_range_loop)]
mod tests {
    use super::*;
    use crate::hetgraph::Schema;
    use crate::sampler::{MetaPath, PathBatch};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut impl Rng, r: usize, c: usize) -> Matrix {
        Matrix::from_vec(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Straight-line scalar re-implementation of a module forward pass.
    fn scalar_module(module: &LinkModule, x: &[f64]) -> Vec<f64> {
        let mut h = x.to_vec();
        for layer in &module.layers {
            let mut out = vec![0.0; layer.outputs()];
            for o in 0..layer.outputs() {
                let mut s = layer.bias.get(0, o);
                for i in 0..layer.inputs() {
                    s += layer.weight.get(o, i) * h[i];
                }
                out[o] = match layer.activation {
                    Activation::Identity => s,
                    Activation::Sigmoid => 1.0 / (1.0 + (-s).exp()),
                    Activation::Relu => {
                        if s > 0.0 {
                            s
                        } else {
                            0.0
                        }
                    }
                };
            }
            h = out;
        }
        h
    }

    fn chain_schema() -> Schema {
        Schema::new(&["a"], &[("p", "a", "a", "q"), ("r", "a", "a", "s")]).unwrap()
    }

    #[test]
    fn embed_gradient_is_two_times_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let table = EmbeddingTable::new(5, &[0, 2, 4], 6, &mut rng).unwrap();
        let c = random_matrix(&mut rng, 1, 6);
        let mut tape = Tape::new();
        let x = tape.gather(&table, &[2]).unwrap();
        let target = tape.constant(c.clone());
        let loss = tape.squared_distance(x, target).unwrap();
        let g = tape.backward(loss).unwrap();
        let row = g.row(2).unwrap();
        for k in 0..6 {
            let expect = 2.0 * (table.embed(2).unwrap()[k] - c.get(0, k));
            assert!((row[k] - expect).abs() < 1e-12);
        }
        assert_eq!(g.num_rows(), 1);
        assert_eq!(g.num_dense(), 0);
    }

    #[test]
    fn module_matches_scalar_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for act in [Activation::Sigmoid, Activation::Relu, Activation::Identity] {
            let m = LinkModule::new(7, 2, act, &mut rng);
            let x = random_matrix(&mut rng, 5, 7);
            let y = module_forward(&m, &x).unwrap();
            for i in 0..5 {
                let expect = scalar_module(&m, x.row(i));
                for (a, b) in y.row(i).iter().zip(&expect) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
        let m = LinkModule::new(7, 1, Activation::Sigmoid, &mut rng);
        assert!(matches!(
            module_forward(&m, &Matrix::zeros(2, 3)),
            Err(crate::Error::Shape(_))
        ));
    }

    #[test]
    fn identity_module_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let x = random_matrix(&mut rng, 4, 5);
        assert_eq!(module_forward(&LinkModule::identity(5), &x).unwrap(), x);
    }

    #[test]
    fn composition_follows_traversal_order() {
        let s = chain_schema();
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let set = LinkModuleSet::new(&s, 4, 1, Activation::Sigmoid, &mut rng);
        let p = s.link_type("p").unwrap();
        let r = s.link_type("r").unwrap();
        let x = random_matrix(&mut rng, 3, 4);
        let single = MetaPath::new(&s, vec![p]).unwrap();
        let (y1, _, _) = compose_forward(&set, &single, CompositionOrder::Traversal, &x).unwrap();
        assert_eq!(y1, module_forward(set.get(p).unwrap(), &x).unwrap());

        let two = MetaPath::new(&s, vec![p, r]).unwrap();
        let (y2, _, _) = compose_forward(&set, &two, CompositionOrder::Traversal, &x).unwrap();
        let expect = module_forward(
            set.get(r).unwrap(),
            &module_forward(set.get(p).unwrap(), &x).unwrap(),
        )
        .unwrap();
        assert_eq!(y2, expect);

        let (y3, _, _) = compose_forward(&set, &two, CompositionOrder::Reversed, &x).unwrap();
        let expect_rev = module_forward(
            set.get(p).unwrap(),
            &module_forward(set.get(r).unwrap(), &x).unwrap(),
        )
        .unwrap();
        assert_eq!(y3, expect_rev);
    }

    #[test]
    fn supervised_loss_reference_values() {
        // zero classifier -> uniform softmax -> ln 4 per example
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let mut pred = Predictor::new(3, 4, 1, Activation::Relu, &mut rng);
        pred.classifier = Matrix::zeros(4, 3);
        let x = random_matrix(&mut rng, 2, 3);
        let (j, _, _) = supervised_loss(&pred, &x, &[0, 3]).unwrap();
        assert!((j - 2.0 * 4f64.ln()).abs() < 1e-12);
        assert!((4f64.ln() - 1.386294).abs() < 1e-6);

        // dominant true logit -> loss ~ 0
        let mut pred = Predictor::new(2, 3, 0, Activation::Relu, &mut rng);
        pred.classifier = Matrix::from_vec(3, 2, vec![1000.0, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        let (j, _, _) = supervised_loss(&pred, &Matrix::from_vec(1, 2, vec![1.0, 0.0]).unwrap(), &[0]).unwrap();
        assert!(j.abs() < 1e-12);

        assert!(matches!(
            supervised_loss(&pred, &Matrix::zeros(1, 2), &[3]),
            Err(crate::Error::ClassOutOfRange { class: 3, .. })
        ));
    }

    #[test]
    fn propagation_loss_single_pair() {
        let s = chain_schema();
        let p = s.link_type("p").unwrap();
        let values = Matrix::from_vec(2, 2, vec![0.5, -1.0, 2.0, 0.25]).unwrap();
        let table = EmbeddingTable::from_parts(2, &[0, 1], values).unwrap();
        let links = LinkModuleSet::identity(&s, 2);
        let batch = PathBatch {
            metapath: MetaPath::new(&s, vec![p]).unwrap(),
            pairs: vec![(0, 1)],
        };
        let (j, mut tape, loss) =
            propagation_loss(&links, &table, &batch, CompositionOrder::Traversal).unwrap();
        let (a, b) = ([0.5, -1.0], [2.0, 0.25]);
        let expect: f64 = (0..2).map(|k| (a[k] - b[k]) * (a[k] - b[k])).sum();
        assert!((j - expect).abs() < 1e-15);
        let g = tape.backward(loss).unwrap();
        let gd = g.row(1).unwrap();
        for k in 0..2 {
            assert!((gd[k] + 2.0 * (a[k] - b[k])).abs() < 1e-15);
        }
        // gradients reach the module of the traversed link only
        let q = s.link_type("q").unwrap();
        assert!(g.dense(&ParamId::LinkWeight { link: p, layer: 0 }).is_some());
        assert!(g.dense(&ParamId::LinkWeight { link: q, layer: 0 }).is_none());

        // x_i == x_j with identity modules -> zero loss, zero gradients
        let table = EmbeddingTable::from_parts(
            2,
            &[0, 1],
            Matrix::from_vec(2, 2, vec![0.3, 0.3, 0.3, 0.3]).unwrap(),
        )
        .unwrap();
        let (j, mut tape, loss) =
            propagation_loss(&links, &table, &batch, CompositionOrder::Traversal).unwrap();
        assert_eq!(j, 0.0);
        assert!(tape.backward(loss).unwrap().is_zero());
    }

    #[test]
    fn batch_loss_is_sum_of_pair_losses() {
        let s = chain_schema();
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let objects: Vec<usize> = (0..6).collect();
        let table = EmbeddingTable::new(6, &objects, 5, &mut rng).unwrap();
        let links = LinkModuleSet::new(&s, 5, 1, Activation::Sigmoid, &mut rng);
        let mp = MetaPath::new(
            &s,
            vec![s.link_type("p").unwrap(), s.link_type("r").unwrap()],
        )
        .unwrap();
        let pairs = vec![(0, 1), (2, 3), (4, 5), (1, 0), (3, 3)];
        let batch = PathBatch {
            metapath: mp.clone(),
            pairs: pairs.clone(),
        };
        let (total, _, _) = propagation_loss(&links, &table, &batch, CompositionOrder::Traversal).unwrap();
        let per_pair: f64 = pairs
            .iter()
            .map(|&pair| {
                let b = PathBatch {
                    metapath: mp.clone(),
                    pairs: vec![pair],
                };
                propagation_loss(&links, &table, &b, CompositionOrder::Traversal)
                    .unwrap()
                    .0
            })
            .sum();
        assert!((total - per_pair).abs() < 1e-12);
    }
}
