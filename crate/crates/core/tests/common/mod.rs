#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use relu_milp::nn::{load_network, Activation, DenseLayer, NeuralNet};
use relu_milp::tasks::{second_likeliest, AdvLabel, AdversaryInstance, InstanceSpec, Norm};

pub fn fixture_net() -> NeuralNet {
    load_network(include_str!("../fixtures/net_2x10.json")).unwrap()
}

/// Dense ReLU net with uniform weights in [-1, 1] and biases in [-0.5, 0.5].
pub fn random_net(rng: &mut ChaCha8Rng, input_dim: usize, hidden: &[usize], outputs: usize) -> NeuralNet {
    let mut dims = vec![input_dim];
    dims.extend_from_slice(hidden);
    dims.push(outputs);
    let layers = dims
        .windows(2)
        .enumerate()
        .map(|(l, d)| DenseLayer {
            weights: (0..d[1]).map(|_| (0..d[0]).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect(),
            biases: (0..d[1]).map(|_| rng.gen_range(-0.5..0.5)).collect(),
            activation: if l + 1 == hidden.len() + 1 { Activation::Linear } else { Activation::Relu },
        })
        .collect();
    NeuralNet::new(input_dim, layers).unwrap()
}

/// Instance around a uniform target in the unit box; the true label is the
/// predicted one and the adversarial label the runner-up.
pub fn random_instance(rng: &mut ChaCha8Rng, net: &NeuralNet, epsilon: f64, norm: Norm) -> AdversaryInstance {
    let target: Vec<f64> = (0..net.input_dim).map(|_| rng.gen_range(0.0..1.0)).collect();
    let f = net.forward(&target).unwrap();
    let j = (0..f.len()).fold(0, |b, k| if f[k] > f[b] { k } else { b });
    let k = second_likeliest(net, &target, j).unwrap();
    InstanceSpec {
        target,
        true_label: j,
        adv_label: AdvLabel::Index(k),
        epsilon,
        norm,
        clip: (0.0, 1.0),
    }
    .resolve(net, 0)
    .unwrap()
}

pub fn with_epsilon(inst: &AdversaryInstance, epsilon: f64, norm: Norm) -> AdversaryInstance {
    AdversaryInstance { epsilon, norm, ..inst.clone() }
}
