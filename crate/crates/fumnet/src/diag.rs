//! Self-check battery: per-layer gradient checks against central finite
//! differences (64-bit), exact causality and receptive-field tests, the
//! default shape chain, and the structural invariants of the gated
//! blocks. The CLI's `gradcheck` command runs this battery and the
//! acceptance suite reuses it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::episode::build_channel_vector_sequence;
use crate::model::{blocks_per_module, ForgetUpdateBlock, ForgetUpdateModule, FumModel, ModelConfig};
use crate::nn::{kaiming_init, CausalConv1d, Mode, ParamStore};
use crate::tensor::{concat_feature, gradcheck, gradcheck_sampled, Tape, Tensor, TensorError, Var};

/// Deliberate defect injected into the battery, proving the checks catch
/// a broken implementation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    /// Split the causal padding across both ends of the sequence, which
    /// preserves lengths but leaks future steps into the past.
    CausalPadding,
}

#[derive(Clone, Debug)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn pass(name: &'static str, detail: impl Into<String>) -> Self {
        Self {
            name,
            passed: true,
            detail: detail.into(),
        }
    }

    fn fail(name: &'static str, detail: impl Into<String>) -> Self {
        Self {
            name,
            passed: false,
            detail: detail.into(),
        }
    }
}

const STEP: f64 = 1e-3;
const TOL: f64 = 1e-4;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn grad_result(
    name: &'static str,
    report: Result<crate::tensor::GradcheckReport, TensorError>,
) -> CheckResult {
    match report {
        Ok(report) if report.pass() => CheckResult::pass(name, report.to_string()),
        Ok(report) => CheckResult::fail(name, report.to_string()),
        Err(err) => CheckResult::fail(name, err.to_string()),
    }
}

/// Runs every named check; `fault` optionally sabotages the implementation
/// under test so the battery's sensitivity can be demonstrated.
pub fn run_battery(fault: Option<Fault>) -> Vec<CheckResult> {
    let mut results = Vec::new();

    results.push(grad_result(
        "gradcheck-elementwise",
        gradcheck(
            |_t, vars| {
                let sum = vars[0].add(vars[1])?;
                let prod = vars[0].mul(vars[1])?;
                let diff = sum.sub(prod)?;
                let ratio = diff.div(vars[1].mul(vars[1])?.add_scalar(1.0))?;
                Ok(ratio.sum_all())
            },
            &[
                kaiming_init(&[3, 4], 4, &mut rng(1)),
                kaiming_init(&[3, 4], 4, &mut rng(2)),
            ],
            STEP,
            TOL,
        ),
    ));

    results.push(grad_result(
        "gradcheck-activations",
        gradcheck(
            |_t, vars| {
                let gated = vars[0].tanh().mul(vars[0].sigmoid())?;
                Ok(gated.add(vars[0].relu())?.sum_all())
            },
            // Inputs pushed away from the relu kink at zero.
            &[Tensor::from_vec(
                (0..24)
                    .map(|i| {
                        let v = ((i * 37 % 19) as f64 / 19.0) * 3.6 - 1.8;
                        if v.abs() < 0.05 {
                            0.3
                        } else {
                            v
                        }
                    })
                    .collect(),
            )
            .reshaped(&[4, 6])
            .expect("24 values")],
            STEP,
            TOL,
        ),
    ));

    results.push(grad_result(
        "gradcheck-matmul",
        gradcheck(
            |_t, vars| Ok(vars[0].matmul(vars[1])?.tanh().sum_all()),
            &[
                kaiming_init(&[4, 6], 6, &mut rng(3)),
                kaiming_init(&[6, 3], 6, &mut rng(4)),
            ],
            STEP,
            TOL,
        ),
    ));

    results.push(grad_result(
        "gradcheck-concat-split",
        gradcheck(
            |_t, vars| {
                let joined = concat_feature(vars[0], vars[1])?;
                let left = joined.narrow(1, 0, 3)?;
                let right = joined.narrow(1, 3, 2)?;
                Ok(left.sigmoid().sum_all().add(right.tanh().sum_all())?)
            },
            &[
                kaiming_init(&[5, 3], 3, &mut rng(5)),
                kaiming_init(&[5, 2], 2, &mut rng(6)),
            ],
            STEP,
            TOL,
        ),
    ));

    results.push(grad_result(
        "gradcheck-conv2d",
        gradcheck_sampled(
            |_t, vars| Ok(vars[0].conv2d3x3(vars[1], vars[2])?.tanh().sum_all()),
            &[
                kaiming_init(&[2, 3, 8, 8], 9, &mut rng(7)),
                kaiming_init(&[4, 3, 3, 3], 27, &mut rng(8)),
                kaiming_init(&[4], 4, &mut rng(9)),
            ],
            STEP,
            TOL,
            40,
            7,
        ),
    ));

    results.push(grad_result(
        "gradcheck-batchnorm",
        gradcheck(
            |_t, vars| {
                let (out, _, _) = vars[0].batchnorm_train(vars[1], vars[2], 1e-5)?;
                Ok(out.tanh().sum_all())
            },
            &[
                kaiming_init(&[2, 4, 5, 5], 1, &mut rng(10)),
                kaiming_init(&[4], 1, &mut rng(11)),
                kaiming_init(&[4], 1, &mut rng(12)),
            ],
            STEP,
            TOL,
        ),
    ));

    results.push(grad_result(
        "gradcheck-maxpool",
        gradcheck(
            |_t, vars| Ok(vars[0].maxpool2x2()?.sum_all()),
            &[Tensor::from_vec(
                (0..64).map(|i| ((i * 53 % 97) as f64) * 0.07).collect(),
            )
            .reshaped(&[2, 2, 4, 4])
            .expect("64 values")],
            STEP,
            1e-6,
        ),
    ));

    results.push(grad_result(
        "gradcheck-linear-weightnorm",
        gradcheck(
            |_t, vars| {
                let (x, w, scale, bias) = (vars[0], vars[1], vars[2], vars[3]);
                let norms = w.mul(w)?.row_sum()?.sqrt();
                let w_eff = w.mul_rows(scale.div(norms)?)?;
                Ok(x.matmul_t(w_eff)?.add_row_bias(bias)?.relu().sum_all())
            },
            &[
                kaiming_init(&[3, 5], 5, &mut rng(13)),
                kaiming_init(&[4, 5], 5, &mut rng(14)),
                kaiming_init(&[4], 1, &mut rng(15)),
                kaiming_init(&[4], 4, &mut rng(16)),
            ],
            STEP,
            TOL,
        ),
    ));

    results.push(grad_result(
        "gradcheck-causal-conv",
        gradcheck_sampled(
            |_t, vars| {
                Ok(vars[0]
                    .causal_conv1d(vars[1], vars[2], 2, 2)?
                    .sigmoid()
                    .sum_all())
            },
            &[
                kaiming_init(&[7, 3], 1, &mut rng(17)),
                kaiming_init(&[4, 3, 2], 6, &mut rng(18)),
                kaiming_init(&[4], 4, &mut rng(19)),
            ],
            STEP,
            TOL,
            60,
            17,
        ),
    ));

    results.push(grad_result(
        "gradcheck-forget-update-block",
        gradcheck_sampled(
            |_t, vars| {
                let x = vars[0];
                let forget = x.causal_conv1d(vars[1], vars[2], 1, 1)?.sigmoid().mul(x)?;
                let update = x
                    .causal_conv1d(vars[3], vars[4], 1, 1)?
                    .tanh()
                    .mul(x.causal_conv1d(vars[5], vars[6], 1, 1)?.sigmoid())?;
                Ok(concat_feature(forget, update)?.sum_all())
            },
            &[
                kaiming_init(&[5, 3], 1, &mut rng(20)),
                kaiming_init(&[3, 3, 2], 6, &mut rng(21)),
                kaiming_init(&[3], 3, &mut rng(22)),
                kaiming_init(&[2, 3, 2], 6, &mut rng(23)),
                kaiming_init(&[2], 2, &mut rng(24)),
                kaiming_init(&[2, 3, 2], 6, &mut rng(25)),
                kaiming_init(&[2], 2, &mut rng(26)),
            ],
            STEP,
            TOL,
            50,
            20,
        ),
    ));

    results.push(grad_result(
        "gradcheck-softmax-cross-entropy",
        gradcheck(
            |_t, vars| crate::nn::mean_cross_entropy(vars[0], &[2, 0]),
            &[kaiming_init(&[2, 4], 1, &mut rng(27))],
            STEP,
            1e-6,
        ),
    ));

    results.push(end_to_end_gradcheck());
    results.push(causality_single_conv(fault));
    results.push(causality_stacked(fault));
    results.push(equal_length(fault));
    results.push(receptive_field_module());
    results.push(shape_chain());
    results.push(dilation_schedule());
    results.push(gate_ranges());
    results.push(weight_norm_rows());
    results.push(k1_reduction());
    results
}

/// Gradcheck of the whole tiny model (c=8, d=4, N=2, filter sizes [2,2])
/// with respect to a sample of every parameter tensor's coordinates.
fn end_to_end_gradcheck() -> CheckResult {
    let name = "gradcheck-end-to-end-tiny";
    let model = match FumModel::<f64>::new(ModelConfig::tiny(), 99) {
        Ok(m) => m,
        Err(e) => return CheckResult::fail(name, e.to_string()),
    };
    let mut image_rng = rng(1234);
    // 2 support + 1 query image, values in [0,1].
    let mut images = Tensor::<f64>::zeros(&[3, 3, 84, 84]);
    for v in images.data_mut() {
        *v = rand::Rng::random_range(&mut image_rng, 0.0..1.0);
    }
    let params: Vec<Tensor<f64>> = model
        .store
        .trainable_ids()
        .map(|id| model.store.get(id).clone())
        .collect();
    // A much smaller step than the per-op checks: batch norm centers the
    // relu inputs at the kink, so each conv weight has thousands of
    // downstream sites that cross zero inside a wide difference window.
    // Kink error scales as O(step²) while f64 roundoff in the quotient
    // stays near 1e-7, so 5e-7 sits comfortably between the two.
    let report = gradcheck_sampled(
        |tape, vars| {
            let frame = model.store.frame_from_vars(tape, vars);
            let images = tape.input(&images, false);
            let mut updates = Vec::new();
            let scores =
                model.episode_scores(&frame, images, 2, 1, 1, Mode::Train, &mut updates)?;
            crate::nn::mean_cross_entropy(scores, &[1])
        },
        &params,
        5e-7,
        TOL,
        4,
        4321,
    );
    grad_result(name, report)
}

fn make_conv(store: &mut ParamStore<f64>, fault: Option<Fault>, dilation: usize) -> CausalConv1d {
    let kernel = 2;
    match fault {
        Some(Fault::CausalPadding) => CausalConv1d::with_padding_split(
            store,
            &format!("conv_d{dilation}"),
            2,
            2,
            kernel,
            dilation,
            (kernel - 1) * dilation / 2,
            &mut rng(31),
        ),
        None => CausalConv1d::new(
            store,
            &format!("conv_d{dilation}"),
            2,
            2,
            kernel,
            dilation,
            &mut rng(31),
        ),
    }
}

fn causality_single_conv(fault: Option<Fault>) -> CheckResult {
    let name = "causality-single-conv";
    let mut store = ParamStore::<f64>::new();
    let conv = make_conv(&mut store, fault, 4);
    let steps = 16;
    let input = kaiming_init::<f64, _>(&[steps, 2], 1, &mut rng(32));
    let eval = |input: &Tensor<f64>| -> Vec<f64> {
        let tape = Tape::new();
        let frame = store.lease(&tape);
        let x = tape.input(input, false);
        conv.forward(&frame, x).expect("shapes fixed").value().into_data()
    };
    let baseline = eval(&input);
    for t in 0..steps {
        let mut perturbed = input.clone();
        perturbed.data_mut()[t * 2] += 1.0;
        let out = eval(&perturbed);
        if out[..t * 2] != baseline[..t * 2] {
            return CheckResult::fail(name, format!("perturbing step {t} changed earlier outputs"));
        }
    }
    CheckResult::pass(name, format!("{steps} steps, exact"))
}

fn causality_stacked(fault: Option<Fault>) -> CheckResult {
    let name = "causality-stacked-pipeline";
    let mut store = ParamStore::<f64>::new();
    // Two stacked gated blocks built from (optionally faulted) convs.
    let convs: Vec<CausalConv1d> = (0..2).map(|i| make_conv(&mut store, fault, 1 << i)).collect();
    let steps = 12;
    let input = kaiming_init::<f64, _>(&[steps, 2], 1, &mut rng(33));
    let eval = |input: &Tensor<f64>| -> Vec<f64> {
        let tape = Tape::new();
        let frame = store.lease(&tape);
        let mut h = tape.input(input, false);
        for conv in &convs {
            h = conv
                .forward(&frame, h)
                .and_then(|g| g.sigmoid().mul(h))
                .expect("shapes fixed");
        }
        h.value().into_data()
    };
    let baseline = eval(&input);
    for t in 0..steps {
        let mut perturbed = input.clone();
        perturbed.data_mut()[t * 2 + 1] -= 0.7;
        let out = eval(&perturbed);
        if out[..t * 2] != baseline[..t * 2] {
            return CheckResult::fail(name, format!("perturbing step {t} leaked backwards"));
        }
    }
    CheckResult::pass(name, format!("{steps} steps through 2 gated blocks, exact"))
}

fn equal_length(fault: Option<Fault>) -> CheckResult {
    let name = "equal-length-causal-conv";
    let mut store = ParamStore::<f64>::new();
    for (i, dilation) in [1usize, 3, 8].into_iter().enumerate() {
        let conv = match fault {
            Some(Fault::CausalPadding) => CausalConv1d::with_padding_split(
                &mut store,
                &format!("len{i}"),
                3,
                5,
                2,
                dilation,
                dilation / 2,
                &mut rng(40 + i as u64),
            ),
            None => CausalConv1d::new(&mut store, &format!("len{i}"), 3, 5, 2, dilation, &mut rng(40 + i as u64)),
        };
        for steps in [1usize, 2, 9, 33] {
            let tape = Tape::new();
            let frame = store.lease(&tape);
            let x = tape.input(&Tensor::zeros(&[steps, 3]), false);
            let out = match conv.forward(&frame, x) {
                Ok(out) => out,
                Err(e) => return CheckResult::fail(name, e.to_string()),
            };
            if out.shape() != vec![steps, 5] {
                return CheckResult::fail(
                    name,
                    format!("dilation {dilation}, {steps} steps -> {:?}", out.shape()),
                );
            }
        }
    }
    CheckResult::pass(name, "output length equals input length for every config")
}

fn receptive_field_module() -> CheckResult {
    let name = "receptive-field-impulse";
    // One module, k=2, c=64: 6 blocks, dilations 1..32, field 64.
    let mut store = ParamStore::<f64>::new();
    let module = ForgetUpdateModule::new(&mut store, "m", 2, 2, 2, 64, &mut rng(50));
    let field = 64usize;
    let steps = field + 2;
    let eval = |input: &Tensor<f64>| -> Vec<f64> {
        let tape = Tape::new();
        let frame = store.lease(&tape);
        let x = tape.input(input, false);
        module.forward(&frame, x).expect("shapes fixed").value().into_data()
    };
    let baseline = eval(&Tensor::zeros(&[steps, 2]));
    let mut impulse = Tensor::zeros(&[steps, 2]);
    impulse.data_mut()[0] = 1.0;
    let response = eval(&impulse);
    let width = module.output_width(2);
    let differs =
        |t: usize| response[t * width..(t + 1) * width] != baseline[t * width..(t + 1) * width];
    if !differs(field - 1) {
        return CheckResult::fail(name, "impulse at step 0 does not reach step 63");
    }
    if differs(field) {
        return CheckResult::fail(name, "impulse at step 0 leaks past the 64-step field");
    }
    CheckResult::pass(name, "field is exactly 64 steps for 6 blocks at k=2")
}

fn shape_chain() -> CheckResult {
    let name = "shape-chain-defaults";
    let config = ModelConfig::default();
    let expected = vec![384, 480, 672];
    if config.width_chain() != expected || config.blocks_per_module() != 6 {
        return CheckResult::fail(name, format!("width chain {:?}", config.width_chain()));
    }
    // One real pass at the default size: 5+1 images -> 5 scores.
    let model = match FumModel::<f32>::new(config, 7) {
        Ok(m) => m,
        Err(e) => return CheckResult::fail(name, e.to_string()),
    };
    let tape = Tape::new();
    let frame = model.store.lease(&tape);
    let mut images = Tensor::<f32>::zeros(&[6, 3, 84, 84]);
    let mut seed = rng(51);
    for v in images.data_mut() {
        *v = rand::Rng::random_range(&mut seed, 0.0..1.0);
    }
    let images = tape.input(&images, false);
    let mut updates = Vec::new();
    let maps = match model.feature_extract(&frame, images, Mode::Eval, &mut updates) {
        Ok(m) => m,
        Err(e) => return CheckResult::fail(name, e.to_string()),
    };
    if maps.shape() != vec![6, 64, 64] {
        return CheckResult::fail(name, format!("feature maps {:?}", maps.shape()));
    }
    let class_maps: Vec<Var<'_, f32>> = (0..5)
        .map(|i| maps.narrow(0, i, 1).and_then(|m| m.reshape(&[64, 64])))
        .collect::<Result<_, _>>()
        .expect("narrow in range");
    let query = maps
        .narrow(0, 5, 1)
        .and_then(|m| m.reshape(&[64, 64]))
        .expect("narrow in range");
    let cvs = match build_channel_vector_sequence(&class_maps, query) {
        Ok(cvs) => cvs,
        Err(e) => return CheckResult::fail(name, e.to_string()),
    };
    if cvs.data.shape() != vec![64, 384] {
        return CheckResult::fail(name, format!("sequence {:?}", cvs.data.shape()));
    }
    let scores = match model.model_forward(&frame, &class_maps, query) {
        Ok(s) => s,
        Err(e) => return CheckResult::fail(name, e.to_string()),
    };
    if scores.shape() != vec![5] {
        return CheckResult::fail(name, format!("scores {:?}", scores.shape()));
    }
    CheckResult::pass(name, "3x84x84 -> 64x64 -> 64x384 -> 64x480 -> 64x672 -> 5")
}

fn dilation_schedule() -> CheckResult {
    let name = "dilation-schedule";
    let mut store = ParamStore::<f32>::new();
    let module = ForgetUpdateModule::new(&mut store, "m", 384, 16, 2, 64, &mut rng(52));
    let dilations: Vec<usize> = module.blocks.iter().map(|b| b.dilation).collect();
    if dilations == vec![1, 2, 4, 8, 16, 32] && blocks_per_module(2, 64) == 6 {
        CheckResult::pass(name, "6 blocks with dilations 1,2,4,8,16,32")
    } else {
        CheckResult::fail(name, format!("{dilations:?}"))
    }
}

fn gate_ranges() -> CheckResult {
    let name = "gate-ranges";
    let mut store = ParamStore::<f64>::new();
    let block = ForgetUpdateBlock::new(&mut store, "b", 6, 4, 2, 2, &mut rng(53));
    let tape = Tape::new();
    let frame = store.lease(&tape);
    let input = kaiming_init::<f64, _>(&[16, 6], 1, &mut rng(54));
    let x = tape.input(&input, false);
    let gate = block
        .forget_conv
        .forward(&frame, x)
        .expect("shapes fixed")
        .sigmoid()
        .value();
    if !gate.data().iter().all(|&v| v > 0.0 && v < 1.0) {
        return CheckResult::fail(name, "forget gate left (0,1)");
    }
    let update = block.update_block(&frame, x).expect("shapes fixed").value();
    if !update.data().iter().all(|&v| v > -1.0 && v < 1.0) {
        return CheckResult::fail(name, "update output left (-1,1)");
    }
    CheckResult::pass(name, "forget gate in (0,1), update output in (-1,1)")
}

fn weight_norm_rows() -> CheckResult {
    let name = "weight-norm-row-norms";
    let mut store = ParamStore::<f64>::new();
    let layer = crate::nn::LinearLayer::new(&mut store, "fc", 9, 5, true, &mut rng(55));
    let scales = store.get(layer.scale.expect("weight-normalized")).clone();
    let tape = Tape::new();
    let frame = store.lease(&tape);
    let w = layer.effective_weight(&frame).expect("shapes fixed").value();
    for i in 0..5 {
        let norm: f64 = w.data()[i * 9..(i + 1) * 9].iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - scales.data()[i].abs()).abs() > 1e-6 {
            return CheckResult::fail(name, format!("row {i}: norm {norm} vs |scale| {}", scales.data()[i]));
        }
    }
    CheckResult::pass(name, "effective row norms equal |scale| within 1e-6")
}

fn k1_reduction() -> CheckResult {
    let name = "k1-averaging-reduction";
    let model = match FumModel::<f32>::new(ModelConfig::tiny(), 42) {
        Ok(m) => m,
        Err(e) => return CheckResult::fail(name, e.to_string()),
    };
    let mut image_rng = rng(56);
    let mut images = Tensor::<f32>::zeros(&[4, 3, 84, 84]);
    for v in images.data_mut() {
        *v = rand::Rng::random_range(&mut image_rng, 0.0..1.0);
    }
    let run = |bypass: bool| -> Vec<u32> {
        let tape = Tape::new();
        let frame = model.store.lease(&tape);
        let input = tape.input(&images, false);
        let mut updates = Vec::new();
        let scores = if bypass {
            model.episode_scores_no_averaging(&frame, input, 2, 2, Mode::Eval, &mut updates)
        } else {
            model.episode_scores(&frame, input, 2, 1, 2, Mode::Eval, &mut updates)
        };
        scores
            .expect("shapes fixed")
            .value()
            .data()
            .iter()
            .map(|v| v.to_bits())
            .collect()
    };
    if run(false) == run(true) {
        CheckResult::pass(name, "1-shot scores bit-identical with averaging bypassed")
    } else {
        CheckResult::fail(name, "averaging changed 1-shot outputs")
    }
}

/// Formats battery results as an aligned table with a final verdict line.
pub fn format_battery(results: &[CheckResult]) -> String {
    let width = results.iter().map(|r| r.name.len()).max().unwrap_or(0);
    let mut out = String::new();
    for r in results {
        out.push_str(&format!(
            "{:width$}  {}  {}\n",
            r.name,
            if r.passed { "PASS" } else { "FAIL" },
            r.detail,
        ));
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    out.push_str(&format!(
        "{} checks, {} failed\n",
        results.len(),
        failed
    ));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clean_battery_passes_everything() {
        let results = run_battery(None);
        assert!(results.len() >= 10, "battery lists {} checks", results.len());
        for r in &results {
            assert!(r.passed, "{}: {}", r.name, r.detail);
        }
    }

    #[test]
    fn broken_padding_is_caught_by_the_causality_checks() {
        let results = run_battery(Some(Fault::CausalPadding));
        let causality_failed = results
            .iter()
            .any(|r| r.name.starts_with("causality") && !r.passed);
        assert!(causality_failed, "fault injection went undetected");
    }
}
