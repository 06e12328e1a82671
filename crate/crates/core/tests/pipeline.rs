use lucent_core::basisgen::{assemble_matrix, build_sample_grid, decompose, project_material, GridConfig};
use lucent_core::dipole::OpticalMaterial;
use lucent_core::lighting::{Cubemap, CubeDirections, Light, LightRig};
use lucent_core::math::{relative_rms, Vec3};
use lucent_core::runtime::{oracle_radiance, AmbientPath, Camera, NullClock, RuntimeSettings, Scene};
use lucent_core::shapes;
use lucent_core::surface::{build_quadtree_atlas, default_level, sample_surface};
use lucent_core::transfer::{compress_transfer, fold_visibility, precompute_visibility, FoldSettings, TransferSettings};

fn scene(settings: TransferSettings, rig: LightRig) -> Scene {
    let cfg = GridConfig { sigma_s_prime_count: 8, sigma_a_count: 8, r_count: 128, ..GridConfig::default() };
    let basis = decompose(&assemble_matrix(&build_sample_grid(&cfg).unwrap()), 8).unwrap();
    let mesh = shapes::icosphere(2, 6.0);
    let s = sample_surface(&mesh);
    let atlas = build_quadtree_atlas(&s, 4, default_level(s.len(), 4)).unwrap();
    let ct = compress_transfer(&s, &atlas, &basis, &settings).unwrap();
    let camera = Camera::framing(mesh.bounds(), Vec3::new(0.2, 0.5, 1.0), 3.0);
    let mat = OpticalMaterial::new([1.2, 0.9, 0.7], [0.03, 0.08, 0.2], 0.0, 1.3).unwrap();
    Scene::new(mesh, atlas, basis, ct, mat, rig, camera, RuntimeSettings::lossless()).unwrap()
}

fn point_rig() -> LightRig {
    LightRig::new(vec![Light::point(Vec3::new(15.0, 20.0, 25.0), [900.0, 800.0, 700.0])]).unwrap()
}

#[test]
fn lossless_pipeline_matches_represented_kernel() {
    let mut sc = scene(TransferSettings::lossless(), point_rig());
    let frame = sc.relight(&NullClock).unwrap();
    let m = *sc.material();
    let w = project_material(&sc.basis, &m);
    let basis = sc.basis.clone();
    let kernel = move |c: usize, r: f64| basis.reconstruct(&w.s[c], r);
    let want = oracle_radiance(&sc.samples, sc.irradiance(), &kernel, m.eta, sc.camera().position);
    assert!(relative_rms(&frame.unclamped, &want) < 1e-6);
}

#[test]
fn edits_and_camera_moves_reuse_cached_stages() {
    let mut sc = scene(TransferSettings::default(), point_rig());
    sc.relight(&NullClock).unwrap();
    let edited = OpticalMaterial::new([2.0, 1.5, 1.0], [0.01, 0.05, 0.1], 0.0, 1.3).unwrap();
    let fast = sc.set_material(edited, &NullClock).unwrap();
    assert_eq!(fast.timings.irradiance, 0.0);
    assert_eq!(fast.timings.transfer, 0.0);
    let full = sc.relight(&NullClock).unwrap();
    assert!(relative_rms(&fast.radiance, &full.radiance) < 1e-12);

    let cam = Camera::framing(sc.mesh.bounds(), Vec3::new(-1.0, 0.0, 0.3), 3.0);
    let moved = sc.set_camera(cam, &NullClock).unwrap();
    assert_eq!(moved.timings.weighting, 0.0);
    assert_eq!(moved.timings.inverse_wavelet, 0.0);
    assert_ne!(moved.radiance, full.radiance);
}

#[test]
fn light_changes_are_linear() {
    let mut sc = scene(TransferSettings::default(), point_rig());
    let a = sc.relight(&NullClock).unwrap().unclamped;
    let b = sc.set_lights(point_rig().scaled(3.0), &NullClock).unwrap().unclamped;
    let tripled: Vec<_> = a.iter().map(|v| v.map(|x| 3.0 * x)).collect();
    assert!(relative_rms(&b, &tripled) < 1e-9);
}

#[test]
fn folded_ambient_tracks_unfolded() {
    let env = Cubemap::new(
        4,
        (0..96).map(|i| [1.0 + (i % 7) as f64 * 0.3, 0.5 + (i % 5) as f64 * 0.2, 0.8]).collect(),
    )
    .unwrap();
    let rig = LightRig::new(vec![Light::Ambient { environment: env }]).unwrap();
    let sc = scene(TransferSettings::default(), rig);
    let vis = {
        let q = sc.shadow_query();
        precompute_visibility(&sc.samples, &q, &CubeDirections::new(4).unwrap())
    };
    let folded = fold_visibility(&sc.transfer, &sc.atlas, &sc.samples, &vis, 1.3, &FoldSettings::lossless()).unwrap();
    let mut sc = sc.with_ambient(Some(folded), Some(vis)).unwrap();
    let a = sc.relight(&NullClock).unwrap().unclamped;
    sc.settings.ambient_path = AmbientPath::Unfolded;
    let b = sc.relight(&NullClock).unwrap().unclamped;
    assert!(relative_rms(&a, &b) < 1e-2, "{}", relative_rms(&a, &b));
}
