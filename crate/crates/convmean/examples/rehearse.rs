use convmean::baselines;
use convmean::data::{self, Dataset, MondrianSpec};
use convmean::metrics;
use convmean::model::Variant;
use convmean::train::{self, TrainConfig};
use std::time::Instant;

fn median_of(errors: &[f64]) -> f64 {
    metrics::error_stats(errors).unwrap().median
}

fn main() {
    let t0 = Instant::now();
    let all = data::synth_generate(7, 300, &MondrianSpec::default()).unwrap();
    let train_set = Dataset { images: all.images[..200].to_vec() };
    let held_out: Vec<_> = all.images[200..].iter().map(|i| data::make_thumbnail(i).unwrap()).collect();
    let thumbs = Dataset { images: train_set.images.iter().map(|i| data::make_thumbnail(i).unwrap()).collect() };

    let gw_errors: Vec<f64> = held_out.iter().map(|img| {
        let est = baselines::gray_world(img, true).unwrap();
        metrics::angular_error(est, img.gt.map(f64::from)).unwrap()
    }).collect();
    println!("gray-world held-out median: {:.4}", median_of(&gw_errors));

    for (label, variant, select) in [
        ("CM   seed7", Variant::Cm, true),
        ("CM-E seed7", Variant::Cm, false),
        ("CM-B seed7", Variant::NoRelu, true),
        ("CM-D seed7", Variant::ChromaInput, true),
    ] {
        let t = Instant::now();
        let cfg = TrainConfig { epochs: 300, seed: 7, variant, select_on_test: select, ..Default::default() };
        let report = train::train_fold(&train_set, &thumbs, &cfg).unwrap();
        let errors = train::evaluate_model(&report.params, &held_out).unwrap();
        println!(
            "{label}: held-out median {:.4} (selected epoch {}, test mean {:.4}) [{:.0}s]",
            median_of(&errors),
            report.selected_epoch + 1,
            report.selected_test_mean(),
            t.elapsed().as_secs_f64()
        );
    }
    println!("total: {:.0}s", t0.elapsed().as_secs_f64());
}
