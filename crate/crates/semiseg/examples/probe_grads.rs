//! Prints gradient magnitudes of the self-supervised objective at init.

use semiseg::augment::{apply_image, invert_prediction_cached, resample_backward, AffineRecord};
use semiseg::dataset::{generate_synthetic, SyntheticKind};
use semiseg::grid::SoftPrediction;
use semiseg::losses;
use semiseg::model::{UNet, UNetArch};

fn main() -> semiseg::Result<()> {
    let samples = generate_synthetic(SyntheticKind::TwoIntensity, 4, (64, 64), 1)?;
    let mut net = UNet::new(UNetArch::new(1, 4, 2).with_aux(4), 11);

    let image = &samples[0].image;
    let rec = AffineRecord::rotation(73.0);
    let rotated = apply_image(image, &rec)?;
    let fwd_a = net.forward(image)?;
    let fwd_b = net.forward(&rotated)?;
    let (h, w) = (image.height(), image.width());
    let valid_b = rec.valid_after_apply(h, w);

    let main_a = SoftPrediction::all_valid(fwd_a.main.clone());
    let main_b = SoftPrediction::new(fwd_b.main.clone(), valid_b.clone())?;
    let (main_b_al, cache) = invert_prediction_cached(&main_b, &rec)?;
    let (loss, ga, gb) = losses::iic_loss_grad(&main_a, &main_b_al)?;

    println!("loss {loss:?}");
    println!("grad wrt probs: max |ga| {:.3e}, max |gb| {:.3e}",
        ga.iter().fold(0.0f64, |m, v| m.max(v.abs())),
        gb.iter().fold(0.0f64, |m, v| m.max(v.abs())));

    net.zero_grads();
    net.backward(&fwd_a, &ga, None);
    let graw = resample_backward(&cache, &main_b_al, &gb);
    net.backward(&fwd_b, &graw, None);

    let mut names = Vec::new();
    net.visit_params(&mut |p| {
        let gmax = p.grad.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let wmax = p.value.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        names.push((p.name.to_string(), gmax, wmax));
    });
    for (name, gmax, wmax) in names.iter().rev().take(6) {
        println!("{name}: max |grad| {gmax:.3e}, max |w| {wmax:.3e}");
    }
    let marg = main_a.marginal();
    println!("marginal A {marg:?}");
    Ok(())
}
