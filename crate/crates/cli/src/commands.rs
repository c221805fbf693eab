use std::fmt::Display;
use std::path::Path;
use std::time::Instant;

use bifnet_core::bifurcated::{load_merged, load_network, save_model, MergedModel, ModelFile, Network, Preset};
use bifnet_core::dataset::{load_dataset_dir, load_mnist_dir, save_dataset_dir, split_by_image, synth_generate, MaskedDataset};
use bifnet_core::fusion::fuse;
use bifnet_core::imaging::{load_pnm, save_pnm, BinaryMap};
use bifnet_core::pipeline::{
    digit_accuracy, evaluate as evaluate_model, merge_and_train, merged_digit_predictions, mnist_merge, mnist_monolithic,
    mnist_separate, seg_training_set, train_class_network, MnistMode,
};
use bifnet_core::{Error, Result};
use serde::Serialize;
use serde_json::json;

use crate::config::RunConfig;

/// Echoes lines to stdout and keeps them for the log file.
#[derive(Default)]
struct Log(String);

impl Log {
    fn line(&mut self, text: impl Display) {
        let text = text.to_string();
        println!("{text}");
        self.0.push_str(&text);
        self.0.push('\n');
    }

    fn save(&self, path: &Path) -> Result<()> {
        write(path, self.0.as_bytes())
    }
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    write(path, (serde_json::to_string_pretty(value)? + "\n").as_bytes())
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn split(cfg: &RunConfig, ds: &MaskedDataset) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(cfg.train_fraction > 0.0 && cfg.train_fraction <= 1.0) {
        return Err(Error::Config(format!("train fraction must lie in (0, 1], got {}", cfg.train_fraction)));
    }
    Ok(split_by_image(&ds.images, cfg.train_fraction, cfg.seed))
}

pub fn synth(cfg: RunConfig, out: &Path) -> Result<()> {
    cfg.require_preset(Preset::Medical)?;
    let spec = cfg.synthetic()?;
    let ds = synth_generate(&spec, cfg.per_class, cfg.seed)?;
    create_dir(out)?;
    save_dataset_dir(&ds, out)?;
    cfg.write(out)?;
    println!("wrote {} images in {} classes to {}", ds.images.len(), ds.class_names.len(), out.display());
    Ok(())
}

pub fn train_separate(mut cfg: RunConfig, data_dir: &Path, out: &Path, only: &[String]) -> Result<()> {
    cfg.settle()?;
    let ds = load_dataset_dir(data_dir, cfg.classes.as_deref())?;
    let (train, test) = split(&cfg, &ds)?;
    let targets: Vec<usize> = if only.is_empty() {
        (0..ds.class_names.len()).collect()
    } else {
        only.iter()
            .map(|name| {
                ds.class_names
                    .iter()
                    .position(|c| c == name)
                    .ok_or_else(|| Error::Data(format!("class {name:?} is not among {:?}", ds.class_names)))
            })
            .collect::<Result<_>>()?
    };
    create_dir(out)?;
    cfg.write(out)?;
    let pipeline = cfg.pipeline();
    for c in targets {
        let name = &ds.class_names[c];
        let mut log = Log::default();
        let (net, _) = train_class_network(&ds, &train, c, &pipeline, &mut |e| log.line(format!("{name} {e}")))?;
        match seg_training_set(&ds, &test, c, &pipeline) {
            Ok(held) => log.line(format!("{name} heldout_patch_accuracy {:.6}", net.accuracy(&held.samples)?)),
            Err(Error::Data(_)) => log.line(format!("{name} heldout_patch_accuracy none")),
            Err(e) => return Err(e),
        }
        save_model(&ModelFile::Network(net), out.join(format!("{name}.bfn")))?;
        log.save(&out.join(format!("{name}.log")))?;
    }
    Ok(())
}

pub fn merge(mut cfg: RunConfig, models: &[std::path::PathBuf], data_dir: &Path, out: &Path) -> Result<()> {
    let nets = models.iter().map(load_network).collect::<Result<Vec<_>>>()?;
    let names = nets
        .iter()
        .map(|n| n.class_names.get(1).cloned())
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| Error::ModelFormat("separate network without an abnormality class name".into()))?;
    if let Some(mode) = nets.first().and_then(|n| n.channel_mode) {
        cfg.channel_mode = mode;
    }
    cfg.classes = Some(names.clone());
    cfg.settle()?;
    let ds = load_dataset_dir(data_dir, Some(&names))?;
    let (train, _) = split(&cfg, &ds)?;
    create_dir(out)?;
    cfg.write(out)?;
    let mut log = Log::default();
    let model = merge_and_train(&nets, &ds, &train, &cfg.pipeline(), &mut |l| log.line(l))?;
    let separate: usize = nets.iter().map(Network::param_count).sum();
    log.line(format!(
        "parameters merged {} separate {} standalone {}",
        model.param_count(),
        separate,
        model.standalone_param_count()
    ));
    save_model(&ModelFile::Merged(model), out.join("merged.bfn"))?;
    log.save(&out.join("merged.log"))
}

fn save_map(map: &BinaryMap, path: &Path) -> Result<()> {
    save_pnm(&map.to_image(), path)
}

pub fn infer(model: &Path, image: &Path, out: &Path, debug_maps: bool) -> Result<()> {
    let model = load_merged(model)?;
    let image = load_pnm(image)?;
    let branch = model.infer(&image)?;
    let fused = fuse(&branch)?;
    create_dir(out)?;
    save_map(&fused.final_map, &out.join("final.pgm"))?;
    if debug_maps {
        for (i, name) in model.class_names.iter().enumerate() {
            save_map(&branch.seg[i], &out.join(format!("seg_{i}_{name}.pgm")))?;
            save_map(&branch.cls[i], &out.join(format!("cls_{i}_{name}.pgm")))?;
            save_map(&branch.seg[i].intersection(&branch.cls[i])?, &out.join(format!("inter_{i}_{name}.pgm")))?;
        }
    }
    let report = json!({
        "class": fused.class.map(|k| model.class_names[k].clone()),
        "class_index": fused.class,
        "class_names": model.class_names,
        "similarities": fused.similarities,
    });
    write_json(&out.join("report.json"), &report)?;
    println!("{}", serde_json::to_string(&report)?);
    Ok(())
}

pub fn evaluate(
    mut cfg: RunConfig,
    model: &Path,
    data_dir: &Path,
    out: &Path,
    separate: &[std::path::PathBuf],
    all: bool,
) -> Result<()> {
    let model = load_merged(model)?;
    let nets = separate.iter().map(load_network).collect::<Result<Vec<_>>>()?;
    cfg.classes = Some(model.class_names.clone());
    cfg.settle()?;
    let ds = load_dataset_dir(data_dir, Some(&model.class_names))?;
    let indices = if all { (0..ds.images.len()).collect() } else { split(&cfg, &ds)?.1 };
    let report = evaluate_model(&model, (!nets.is_empty()).then_some(&nets[..]), &ds, &indices)?;
    create_dir(out)?;
    cfg.write(out)?;
    let table = report.to_table();
    write_json(&out.join("evaluation.json"), &report)?;
    write(&out.join("evaluation.txt"), table.as_bytes())?;
    print!("{table}");
    Ok(())
}

#[derive(Serialize)]
struct DigitResult {
    digit: usize,
    accuracy: f64,
}

fn digit_results(nets: &[(Network, f64)], digits: &[usize]) -> Vec<DigitResult> {
    digits
        .iter()
        .zip(nets)
        .map(|(&digit, (_, accuracy))| DigitResult {
            digit,
            accuracy: *accuracy,
        })
        .collect()
}

fn merged_params(model: &MergedModel) -> serde_json::Value {
    json!({"merged": model.param_count(), "standalone": model.standalone_param_count()})
}

pub fn mnist(
    mut cfg: RunConfig,
    mode: MnistMode,
    data_dir: &Path,
    out: &Path,
    digits: Option<Vec<usize>>,
    separate_dir: Option<&Path>,
) -> Result<()> {
    cfg.settle_mnist()?;
    let mc = cfg.mnist();
    let (train, test) = load_mnist_dir(data_dir)?;
    let train = mc.training_subset(&train);
    create_dir(out)?;
    cfg.write(out)?;
    let start = Instant::now();
    let mut log = Log::default();
    let all: Vec<usize> = (0..10).collect();
    let report = match mode {
        MnistMode::Separate => {
            let digits = digits.unwrap_or(all);
            let nets = mnist_separate(&train, &test, &digits, &mc, &mut |d, e| log.line(format!("digit {d} {e}")))?;
            for (d, (net, _)) in digits.iter().zip(&nets) {
                save_model(&ModelFile::Network(net.clone()), out.join(format!("digit_{d}.bfn")))?;
            }
            let results = digit_results(&nets, &digits);
            let min = results.iter().map(|r| r.accuracy).fold(f64::INFINITY, f64::min);
            json!({"mode": mode, "train_samples": train.len(), "digits": results, "min_accuracy": min})
        }
        MnistMode::Monolithic => {
            let (net, acc) = mnist_monolithic(&train, &test, &mc, &mut |e| log.line(format!("monolithic {e}")))?;
            let params = net.param_count();
            save_model(&ModelFile::Network(net), out.join("monolithic.bfn"))?;
            json!({"mode": mode, "train_samples": train.len(), "accuracy": acc, "parameters": params})
        }
        MnistMode::Merged => {
            let (nets, separate) = match separate_dir {
                Some(dir) => {
                    let nets = all
                        .iter()
                        .map(|d| load_network(dir.join(format!("digit_{d}.bfn"))))
                        .collect::<Result<Vec<_>>>()?;
                    (nets, None)
                }
                None => {
                    let trained = mnist_separate(&train, &test, &all, &mc, &mut |d, e| log.line(format!("digit {d} {e}")))?;
                    let results = digit_results(&trained, &all);
                    (trained.into_iter().map(|(n, _)| n).collect(), Some(results))
                }
            };
            let model = mnist_merge(&nets, &train, &mc, &mut |e| log.line(format!("heads {e}")))?;
            let acc = digit_accuracy(&merged_digit_predictions(&model, &test)?, &test);
            let params = merged_params(&model);
            save_model(&ModelFile::Merged(model), out.join("merged.bfn"))?;
            json!({"mode": mode, "train_samples": train.len(), "accuracy": acc, "separate": separate, "parameters": params})
        }
    };
    log.save(&out.join(format!("mnist_{}.log", mode_name(mode))))?;
    write_json(&out.join(format!("mnist_{}.json", mode_name(mode))), &report)?;
    println!("{}", serde_json::to_string(&report)?);
    eprintln!("elapsed {:.1}s", start.elapsed().as_secs_f64());
    Ok(())
}

fn mode_name(mode: MnistMode) -> &'static str {
    match mode {
        MnistMode::Separate => "separate",
        MnistMode::Merged => "merged",
        MnistMode::Monolithic => "monolithic",
    }
}
