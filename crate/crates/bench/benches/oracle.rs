use criterion::{black_box, criterion_group, criterion_main, Criterion};
use pace_bench::{desk_config, desk_instance};
use pace_core::fdfd::{sample_device, simulate_sources};
use pace_core::field::SourceSpec;
use pace_core::model::{init_params, predict, Architecture, ModelConfig};
use pace_core::spectral::ModeSpec;

fn fdfd_vs_model(c: &mut Criterion) {
    let (m, n) = (32, 64);
    let cfg = desk_config(m, n);
    let dev = sample_device(&cfg, 0, 0).unwrap();
    let pml = cfg.pml_for(&dev.domain);
    let src = SourceSpec::new(dev.spec.input_ports()[0], dev.wavelength);

    let mut g = c.benchmark_group("desk_32x64");
    g.sample_size(20);
    g.bench_function("fdfd_solve", |b| {
        b.iter(|| simulate_sources(&dev.spec, black_box(&[src]), &dev.domain, &pml, &cfg.solver).unwrap())
    });

    let inst = desk_instance(m, n);
    let arch = Architecture::Single(ModelConfig {
        output_scale: Some(1.0),
        ..ModelConfig::pace(16, 4, ModeSpec::new(8, 12), 4)
    });
    let params = init_params(&arch, 0).unwrap();
    g.bench_function("model_forward", |b| b.iter(|| predict(&arch, black_box(&inst), &params).unwrap()));
    g.finish();
}

criterion_group!(benches, fdfd_vs_model);
criterion_main!(benches);
