//! Compares reverse-mode gradients of a GEVN against central finite
//! differences, with respect to the ballots and to every parameter.
//!
//! ```text
//! cargo run --release --example gradient_check
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use votegraph::autodiff::{check_gradients, check_gradients_with, AutodiffError, Tape, Tensor};
use votegraph::data::gen_dirichlet;
use votegraph::election::PreferenceProfile;
use votegraph::models::{DifferentiableMechanism, Gevn, GevnConfig, GraphBatch};

fn main() -> votegraph::Result<()> {
    let config = GevnConfig { layers: 3, node_width: 8, edge_width: 4 };
    let gevn = Gevn::new(config, 5)?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let profiles: Vec<PreferenceProfile> = (0..3)
        .map(|_| PreferenceProfile::from_utilities(&gen_dirichlet(rng.random_range(2..6), rng.random_range(2..5), &mut rng)))
        .collect();
    let refs: Vec<&PreferenceProfile> = profiles.iter().collect();
    let batch = GraphBatch::from_profiles(&refs);
    let weights = Tensor::column((0..batch.num_candidates()).map(|_| rng.random_range(-1.0..1.0)).collect());

    // A random linear functional of the outcome column.
    let objective = |g: &Gevn, tape: &mut Tape, trainable: bool, edges| -> votegraph::Result<_> {
        let bound = g.params().bind(tape, trainable)?;
        let p = g.forward(tape, &bound, &batch, edges)?;
        let w = tape.constant(weights.clone())?;
        let y = tape.mul(p, w)?;
        Ok((tape.sum(y)?, bound))
    };
    let as_autodiff = |e: votegraph::Error| AutodiffError::Shape(e.to_string());

    let wrt_ballots = check_gradients(
        |tape, x| objective(&gevn, tape, false, x).map(|(y, _)| y).map_err(as_autodiff),
        batch.edge_features(),
        1e-6,
    )?;
    println!("ballots:    {} entries, max relative error {wrt_ballots:.2e}", batch.num_pairs());

    let mut tape = Tape::new();
    let edges = tape.constant(batch.edge_features().clone())?;
    let (y, bound) = objective(&gevn, &mut tape, true, edges)?;
    let mut grads = tape.backward(y)?;
    let analytic: Vec<f64> = gevn.params().collect_grads(&bound, &mut grads).into_iter().flat_map(Tensor::into_data).collect();
    let point: Vec<f64> = gevn.params().values().iter().flat_map(|t| t.data().to_vec()).collect();
    let wrt_params = check_gradients_with(
        |flat| {
            let mut g = gevn.clone();
            let mut rest = flat;
            let values = g
                .params()
                .values()
                .iter()
                .map(|t| {
                    let (head, tail) = rest.split_at(t.len());
                    rest = tail;
                    Tensor::new(t.rows(), t.cols(), head.to_vec())
                })
                .collect::<Result<Vec<_>, _>>()?;
            g.params_mut().assign(values)?;
            let mut tape = Tape::new();
            let edges = tape.constant(batch.edge_features().clone())?;
            let (y, _) = objective(&g, &mut tape, false, edges).map_err(as_autodiff)?;
            Ok(tape.value(y).item())
        },
        &analytic,
        &point,
        1e-6,
    )?;
    println!("parameters: {} scalars, max relative error {wrt_params:.2e}", point.len());
    Ok(())
}
