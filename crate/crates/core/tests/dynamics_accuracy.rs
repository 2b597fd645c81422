use rand::Rng;
use sparse_explorer::dynamics::{DynamicsPredictor, StateScaler};
use sparse_explorer::envs::{Environment, MountainCar, MountainCarState, SparseCorridor};
use sparse_explorer::nn::Optimizer;
use sparse_explorer::replay::Transition;
use sparse_explorer::seeded_rng;

fn corridor_transitions(length: usize, n: usize, seed: u64) -> Vec<Transition> {
    let mut rng = seeded_rng(seed);
    let mut env = SparseCorridor::new(length).unwrap();
    (0..n)
        .map(|_| {
            let x = rng.random_range(0..=length);
            let a = rng.random_range(0..2);
            let s = env.reset_to(x).unwrap();
            let out = env.step(a).unwrap();
            Transition { state: s, action: a, reward: out.reward, next_state: out.state, done: out.done }
        })
        .collect()
}

fn mountain_car_transitions(n: usize, seed: u64) -> Vec<Transition> {
    let mut rng = seeded_rng(seed);
    let mut env = MountainCar::new();
    let mut s = env.reset(&mut rng);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let a = rng.random_range(0..3);
        let step = env.step(a).unwrap();
        out.push(Transition {
            state: s,
            action: a,
            reward: step.reward,
            next_state: step.state.clone(),
            done: step.done,
        });
        s = if step.done { env.reset(&mut rng) } else { step.state };
    }
    out
}

fn train(d: &mut DynamicsPredictor, data: &[Transition], steps: usize, lr: f64, seed: u64) {
    let mut rng = seeded_rng(seed);
    for _ in 0..steps {
        let batch: Vec<&Transition> = (0..64).map(|_| &data[rng.random_range(0..data.len())]).collect();
        d.train(&batch, lr).unwrap();
    }
}

fn corridor_exhaustive_error(d: &DynamicsPredictor, length: usize) -> usize {
    let mut env = SparseCorridor::new(length).unwrap();
    let mut wrong = 0;
    for x in 0..=length {
        for a in 0..2 {
            let s = env.reset_to(x).unwrap();
            let truth = env.step(a).unwrap().state[0];
            let p = d.predict_next(&s, a).unwrap()[0];
            wrong += (p.round() != truth) as usize;
        }
    }
    wrong
}

#[test]
fn corridor_predictions_round_to_truth_with_agent_defaults() {
    let env = SparseCorridor::new(8).unwrap();
    let data = corridor_transitions(8, 2000, 44);
    let mut d = DynamicsPredictor::new(1, 2, 24, &mut seeded_rng(45))
        .unwrap()
        .with_optimizer(Optimizer::adam())
        .with_scaler(StateScaler::from_bounds(&env.bounds()).unwrap())
        .unwrap();
    train(&mut d, &data, 2000, 0.02, 46);
    assert_eq!(corridor_exhaustive_error(&d, 8), 0);
}

#[test]
fn mountain_car_held_out_error() {
    let env = MountainCar::new();
    let scaler = StateScaler::from_bounds(&env.bounds()).unwrap();
    let data = mountain_car_transitions(10_000, 47);
    let held_out = mountain_car_transitions(2_000, 48);
    let mut d = DynamicsPredictor::new(2, 3, 24, &mut seeded_rng(49))
        .unwrap()
        .with_optimizer(Optimizer::adam())
        .with_scaler(scaler.clone())
        .unwrap();
    train(&mut d, &data, 10_000, 0.02, 50);
    let mse: f64 = held_out
        .iter()
        .map(|t| {
            let p = scaler.scale(&d.predict_next(&t.state, t.action).unwrap());
            let y = scaler.scale(&t.next_state);
            p.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / 2.0
        })
        .sum::<f64>()
        / held_out.len() as f64;
    assert!(mse < 1e-4, "held-out mse {mse}");
}

#[test]
fn full_batch_loss_mostly_non_increasing() {
    let data = mountain_car_transitions(256, 51);
    let batch: Vec<&Transition> = data.iter().collect();
    let mut d = DynamicsPredictor::new(2, 3, 24, &mut seeded_rng(52))
        .unwrap()
        .with_scaler(StateScaler::from_bounds(&MountainCar::new().bounds()).unwrap())
        .unwrap();
    let losses: Vec<f64> = (0..200).map(|_| d.train(&batch, 0.02).unwrap()).collect();
    let non_increasing = losses.windows(2).filter(|w| w[1] <= w[0]).count();
    assert!(non_increasing * 10 >= (losses.len() - 1) * 9, "{non_increasing} of {}", losses.len() - 1);
    assert!(losses.last().unwrap() < &losses[0]);
}

#[test]
fn identical_inputs_identical_outputs() {
    let d = DynamicsPredictor::new(2, 3, 24, &mut seeded_rng(53)).unwrap();
    let s = MountainCarState { position: -0.5, velocity: 0.01 };
    let a = d.predict_next(&[s.position, s.velocity], 2).unwrap();
    assert_eq!(a, d.predict_next(&[s.position, s.velocity], 2).unwrap());
}
