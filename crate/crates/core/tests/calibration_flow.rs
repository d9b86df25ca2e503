use arraycal_core::calibration::{calibrate_dbf, canonical_indices, codebook_scale, realize_dbf, DistortionSource};
use arraycal_core::gp::{HyperparameterBounds, OptimizerOptions};
use arraycal_core::{
    beam_pattern, bpa_rmse, design_sampling_plan, fit_calibration_model, generate_distortion, make_abf_codebook,
    make_uniform_rect_array, nrmse, simulate_measurements, synthesize_weights, AbfCodebook, AngleGrid, CalibrationMode,
    CalibrationModel, CgOptions, Complex64, DenominatorMode, DistortionParams, DistortionTensor, FitSettings, GridAxes,
    KernelSpec, Sector, SmComponent, SynthesisSpec,
};

const F: usize = 8;
const NX: usize = 4;
const NY: usize = 4;
const BITS: u32 = 3;

fn kernels(z: usize) -> Vec<KernelSpec> {
    let phases = 1usize << BITS;
    let harmonics = (0..=phases / 2)
        .map(|k| SmComponent::new(0.5 / (k + 1) as f64, k as f64 * (z - 1) as f64 / phases as f64, 1.0))
        .collect();
    vec![KernelSpec::rq(1.0, 0.3, 2.0), KernelSpec::rq(1.0, 0.3, 2.0), KernelSpec::sm(harmonics)]
}

fn settings(z: usize) -> FitSettings {
    FitSettings {
        kernels: kernels(z),
        noise_variance: 1e-6,
        min_noise_variance: 1e-6,
        learn_hyperparameters: false,
        subsample: 200,
        bounds: HyperparameterBounds::default(),
        optimizer: OptimizerOptions::default(),
        cg: CgOptions { tolerance: 1e-6, max_iters: Some(10_000), eigen_truncation: 1e-8, ..CgOptions::default() },
        seed: 0,
    }
}

struct Setup {
    axes: GridAxes,
    codebook: AbfCodebook,
    freqs: Vec<f64>,
    distortion: DistortionTensor,
}

fn setup(seed: u64, amplitude: f64) -> Setup {
    let codebook = make_abf_codebook(BITS, (0.25, 1.0)).unwrap();
    let freqs: Vec<f64> = (0..F).map(|k| 3.5e9 + 1e6 * k as f64).collect();
    let axes = GridAxes::uniform(&[F, NX * NY, codebook.len()]).unwrap();
    let params = DistortionParams { re_amplitude: amplitude, im_amplitude: amplitude, cutoffs: [2, 2, 2] };
    let distortion = generate_distortion(seed, &axes, &freqs, &params).unwrap();
    Setup { axes, codebook, freqs, distortion }
}

fn fit(s: &Setup, fraction: f64, seed: u64) -> CalibrationModel {
    let mask = design_sampling_plan(&s.axes, fraction, seed).unwrap();
    let grid = simulate_measurements(&s.axes, &s.distortion, &s.codebook, &mask, 1e-3, seed).unwrap();
    fit_calibration_model(&grid, &settings(s.codebook.len()), CalibrationMode::Dbf, &s.codebook, None).unwrap()
}

fn all_cells(shape: [usize; 3]) -> Vec<[usize; 3]> {
    let [nf, nn, nz] = shape;
    (0..nf).flat_map(|f| (0..nn).flat_map(move |n| (0..nz).map(move |z| [f, n, z]))).collect()
}

#[test]
fn reconstruction_recovers_the_distortion_surface() {
    let s = setup(4, 0.1);
    let model = fit(&s, 0.4, 4);
    let d_hat = model.distortions(&all_cells(s.distortion.shape())).unwrap();
    let truth = s.distortion.values();
    let re = nrmse(&truth.iter().map(|d| d.re).collect::<Vec<_>>(), &d_hat.iter().map(|d| d.re).collect::<Vec<_>>()).unwrap();
    let im = nrmse(&truth.iter().map(|d| d.im).collect::<Vec<_>>(), &d_hat.iter().map(|d| d.im).collect::<Vec<_>>()).unwrap();
    assert!(re < 0.1 && im < 0.1, "NRMSE re {re}, im {im}");
}

#[test]
fn fitted_dbf_correction_beats_the_uncorrected_pattern() {
    let s = setup(9, 0.2);
    let model = fit(&s, 0.4, 9);
    let geom = make_uniform_rect_array(NX, NY, 0.5).unwrap();
    let f_ref = s.freqs[F / 2];
    let spec = SynthesisSpec::new((90.0, 90.0), vec![Sector { azimuth: (130.0, 150.0), elevation: (70.0, 110.0) }], 1e-2);
    let desired: Vec<Vec<Complex64>> = s.freqs.iter().map(|&f| synthesize_weights(&geom, f, f_ref, &spec).unwrap()).collect();
    let canonical = canonical_indices(&desired, &s.codebook, codebook_scale(&desired, &s.codebook).unwrap());

    let angles = AngleGrid::uniform(5.0, 5.0).unwrap();
    let pattern = |w: &[Vec<Complex64>]| beam_pattern(&geom, w, &angles, &s.freqs, f_ref).unwrap();
    let ideal = pattern(&desired);
    let distorted = pattern(&realize_dbf(&desired, &s.distortion, &canonical));
    let corrected = calibrate_dbf(&desired, &model, &canonical).unwrap();
    let calibrated = pattern(&realize_dbf(&corrected, &s.distortion, &canonical));

    let before = bpa_rmse(&ideal, &distorted, DenominatorMode::PaperSum).unwrap();
    let after = bpa_rmse(&ideal, &calibrated, DenominatorMode::PaperSum).unwrap();
    assert!(after < before / 1.5, "BPA {before} -> {after}");
}

#[test]
fn saved_model_state_predicts_identically() {
    let s = setup(2, 0.1);
    let model = fit(&s, 0.3, 2);
    let json = serde_json::to_string(&model.to_state().unwrap()).unwrap();
    let restored = CalibrationModel::from_state(serde_json::from_str(&json).unwrap()).unwrap();
    assert_eq!(model.predict_grid().unwrap(), restored.predict_grid().unwrap());
}

#[test]
fn same_seed_same_model() {
    let s = setup(5, 0.1);
    assert_eq!(fit(&s, 0.3, 5).predict_grid().unwrap(), fit(&s, 0.3, 5).predict_grid().unwrap());
    assert_ne!(fit(&s, 0.3, 5).predict_grid().unwrap(), fit(&s, 0.3, 6).predict_grid().unwrap());
}
