use rcla_core::data::corpus::{Corpus, LmWindows};
use rcla_core::model::load_checkpoint;
use rcla_core::routing::RoutingPlan;
use rcla_core::train::evaluate;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let seed: u64 = args[1].parse().unwrap();
    let windows: usize = args[2].parse().unwrap();
    let corpus = Corpus::synthetic(512, seed);
    let data = LmWindows::new(&corpus, 48, windows).unwrap();
    for path in &args[3..] {
        let (model, mode) = load_checkpoint::<f32>(path).unwrap();
        let loss = evaluate(&model, data.eval_set(), &RoutingPlan::identity(model.config.n_layers)).unwrap();
        println!("{path} [{}]: eval {loss:.5} over {} windows", mode.unwrap_or_default(), data.eval_set().len());
    }
}
