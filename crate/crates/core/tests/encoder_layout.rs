use mets::encoder::{build_encoder, EncoderConfig, ModelParams, ParamKind};
use mets::tensor::Tensor;

/// Parameter count of a 1-D ResNet-18 with a linear head, summed by hand:
/// conv weights are `out * in * k`, each batch norm has a scale and a shift.
fn resnet18_count(leads: usize, dim: usize) -> usize {
    let bn = |c: usize| 2 * c;
    let mut total = 64 * leads * 7 + bn(64);
    let mut c_in = 64;
    for (stage, c) in [64, 128, 256, 512].into_iter().enumerate() {
        // first block
        total += c * c_in * 3 + bn(c) + c * c * 3 + bn(c);
        if stage > 0 {
            total += c * c_in + bn(c);
        }
        // second block
        total += 2 * (c * c * 3 + bn(c));
        c_in = c;
    }
    total + 512 * dim + dim + 1
}

#[test]
fn default_parameter_count() {
    let model: ModelParams<f32> = build_encoder(&EncoderConfig::default(), 0).unwrap();
    assert_eq!(model.num_parameters(), resnet18_count(12, 128));
    // 20 convolutions with a batch norm each, head weight and bias, temperature
    assert_eq!(model.params().len(), 20 * 3 + 3);
    assert_eq!(model.buffers().len(), 20 * 2);
}

#[test]
fn kinds_follow_names() {
    let model: ModelParams<f32> = build_encoder(&EncoderConfig::micro(), 0).unwrap();
    for (name, p) in model.params() {
        let expected = if name == "log_temperature" {
            ParamKind::LogTemperature
        } else if name == "head.weight" {
            ParamKind::LinearWeight
        } else if name == "head.bias" {
            ParamKind::LinearBias
        } else if name.ends_with(".gamma") {
            ParamKind::BnScale
        } else if name.ends_with(".beta") {
            ParamKind::BnShift
        } else {
            assert!(name.ends_with("conv.weight") || name.ends_with(".conv1.weight") || name.ends_with(".conv2.weight"), "{name}");
            ParamKind::ConvWeight
        };
        assert_eq!(p.kind, expected, "{name}");
    }
    assert_eq!(model.temperature(), 0.07f32.ln().exp());
}

#[test]
fn embeddings_have_projection_width() {
    let config = EncoderConfig::micro();
    let model: ModelParams<f64> = build_encoder(&config, 1).unwrap();
    let n = 3;
    let samples = config.min_samples().max(64);
    let data = (0..n * config.in_leads * samples).map(|i| ((i * 37 % 101) as f64 / 50.0) - 1.0).collect();
    let x = Tensor::new(vec![n, config.in_leads, samples], data).unwrap();
    let e = model.embed(&x).unwrap();
    assert_eq!(e.shape(), &[n, config.projection_dim]);
    assert!(e.is_finite());

    let short = Tensor::<f64>::zeros(vec![1, config.in_leads, config.min_samples() - 1]);
    assert!(model.embed(&short).is_err());
    let wrong_leads = Tensor::<f64>::zeros(vec![1, config.in_leads + 1, samples]);
    assert!(model.embed(&wrong_leads).is_err());
}
