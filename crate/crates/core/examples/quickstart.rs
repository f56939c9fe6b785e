use ddprice::apps::MultiproductModel;
use ddprice::harness::{gen_synthetic, SyntheticConfig};
use ddprice::{
    run_psg_specialized, DeltaPolicy, ExperimentSchedule, OutputPolicy, PsgOptions, RunControl, StopRule, StreamKey,
};

fn main() -> ddprice::Result<()> {
    let model = MultiproductModel::new(gen_synthetic(&SyntheticConfig::new(20, 200, 1))?)?;
    let schedule = ExperimentSchedule::new(200)?;
    let control = RunControl::new(StopRule::iterations(300), OutputPolicy::BestNer { samples: 1000 }, StreamKey::new(1, 0, 1));
    let opts = PsgOptions { schedule: &schedule, delta: DeltaPolicy::Ogd { initial: 0.0 }, control };
    let record = run_psg_specialized(&model, &vec![0.5; 20], &opts)?;
    println!("iterations: {}", record.iterations);
    println!("ner: {:?}", record.output_ner);
    println!("x: {:?}", record.output);
    Ok(())
}
