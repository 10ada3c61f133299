//! Scores a generator checkpoint on a dataset manifest in every evaluation
//! region, next to the majority-class baseline.
//!
//! cargo run --release --example evaluate -- <checkpoint.ssck> <manifest.json>

use std::env;

use sscgan::dataset::{Dataset, TsdfOptions};
use sscgan::metrics::{majority_baseline, Accumulator, Region};
use sscgan::nets::checkpoint::Checkpoint;
use sscgan::nets::Generator;
use sscgan::train::{predict_labels, TrainConfig};
use sscgan::voxcore::LabelVolume;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = env::args().skip(1).collect();
    let [ck_path, manifest] = args.as_slice() else {
        return Err("usage: evaluate <checkpoint.ssck> <manifest.json>".into());
    };
    let ck = Checkpoint::load(ck_path)?;
    let config: TrainConfig = serde_json::from_value(ck.meta["config"].clone())?;
    let gen = Generator::<f32>::new(serde_json::from_value(ck.meta["generator"].clone())?)?;
    let mut params = gen.init_params(0);
    ck.load_store("gen", &mut params)?;
    let opts: TsdfOptions = config.tsdf;

    let data = Dataset::load(manifest, &opts)?;
    let preds = predict_labels(&gen, &params, &data.samples)?;
    let gts: Vec<&LabelVolume> = data.samples.iter().map(|s| &s.labels).collect();
    println!("{} at step {} on {} scenes", config.variant_name(), ck.step, data.len());
    for region in [Region::Occluded, Region::ObservedAndOccluded, Region::AllInView] {
        let mut acc = Accumulator::new(data.grid.num_classes, region);
        for (p, g) in preds.iter().zip(&gts) {
            acc.add(p, g)?;
        }
        let r = acc.report();
        let iou: Vec<String> = r.per_class_iou.iter().map(|v| v.map_or("-".into(), |v| format!("{v:.2}"))).collect();
        println!(
            "{region:?}: {} voxels | SC P {:.3} R {:.3} IoU {:.3} | SSC avg {} [{}] | baseline {:.3}",
            r.region_size,
            r.sc_precision,
            r.sc_recall,
            r.sc_iou,
            r.ssc_avg.map_or("undefined".into(), |v| format!("{v:.3}")),
            iou.join(" "),
            majority_baseline(&gts, region)?
        );
    }
    Ok(())
}
