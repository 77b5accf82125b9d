//! Compare backpropagation with finite differences, then train a small net.

use cc_transfer::cli::random_gradient_check;
use cc_transfer::nnet::{train, Head, Layer, NetSpec, Targets, TrainConfig};
use cc_transfer::synth::{blobs, BlobConfig};

fn main() -> cc_transfer::Result<()> {
    let conv = NetSpec {
        input_dim: 2 * 8 * 8,
        input_shape: Some([2, 8, 8]),
        layers: vec![
            Layer::Conv2d {
                out_channels: 4,
                kernel: 3,
                stride: 2,
            },
            Layer::Relu,
            Layer::Flatten,
            Layer::Dense { out_dim: 3 },
        ],
        head: Head::SoftmaxCrossEntropy { n_classes: 3 },
    };
    let mlp = NetSpec::mlp(6, &[8, 8], Head::L2Regression { out_dim: 2 });
    for spec in [&conv, &mlp] {
        let r = random_gradient_check(spec, 1, 4, 1e-5)?;
        println!(
            "{} parameters, max relative error {:.2e}",
            r.n_params, r.max_rel_error
        );
    }

    let data = blobs(&BlobConfig {
        classes: 3,
        per_class: 50,
        dim: 4,
        seed: 2,
        ..Default::default()
    })?;
    let spec = NetSpec::mlp(
        data.features.n_dims(),
        &[16],
        Head::SoftmaxCrossEntropy { n_classes: 3 },
    );
    let cfg = TrainConfig {
        epochs: 10,
        seed: 1,
        ..Default::default()
    };
    let (_, history) = train(
        &spec,
        &cfg,
        &data.features,
        Targets::Classes(data.labels.labels()),
    )?;
    for e in history.epochs.iter().step_by(3) {
        println!(
            "epoch {:2}  loss {:.4}  accuracy {:.3}",
            e.epoch,
            e.loss,
            e.accuracy.unwrap()
        );
    }
    Ok(())
}
