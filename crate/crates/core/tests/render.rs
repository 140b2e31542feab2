use sstrace::geometry::TriangleMesh;
use sstrace::optics::MediumParams;
use sstrace::render::{
    image_metrics, path_stream_index, render, Camera, Environment, Integrator, Light, RenderOptions, Scene,
};
use sstrace::rng::{stream, uniform, Domain};
use sstrace::scatter::ScatterModels;
use sstrace::vec3::{UnitVec3, Vec3};

fn scene(sigma_t: [f64; 3], g: f64, phi: [f64; 3], light: bool, size: usize) -> Scene {
    let mesh = TriangleMesh::icosphere(3).transformed(0.5, Vec3::zero());
    let media = [0, 1, 2].map(|c| MediumParams::new(sigma_t[c], g, phi[c]).unwrap());
    let env = Environment {
        up: UnitVec3::new_normalize(Vec3::unit_y()),
        zenith: [1.0, 0.9, 0.8],
        nadir: [0.1, 0.2, 0.3],
    };
    let cam = Camera::look_at(Vec3::new(0.0, 0.3, 3.0), Vec3::zero(), Vec3::unit_y(), 25.0, size, size).unwrap();
    let light = light.then_some(Light::Point { position: Vec3::new(1.5, 2.0, 1.0), power: [4.0, 3.0, 2.0] });
    Scene::new(mesh, media, light, env, cam, 32).unwrap()
}

#[test]
fn vacuum_images_match_between_integrators_and_background() {
    let s = scene([0.0; 3], 0.3, [1.0; 3], true, 12);
    let models = ScatterModels::<f32>::untrained(3);
    let opts = RenderOptions::new(2, 5, true);
    let (pt, _) = render(&s, Integrator::PathTracing, &opts).unwrap();
    let (st, st_stats) = render(&s, Integrator::SphereTracing(&models), &opts).unwrap();
    assert_eq!(pt.pixels, st.pixels);
    assert_eq!(st_stats.decoder_evals, 0);
    // straight rays see the environment
    for y in 0..12 {
        for x in 0..12 {
            for c in 0..3 {
                let mut expect = 0.0;
                for k in 0..2 {
                    let mut rng = stream(5, Domain::Render, path_stream_index(y * 12 + x, 2, k, c));
                    let (jx, jy) = (uniform::<f64, _>(&mut rng), uniform::<f64, _>(&mut rng));
                    expect += s.environment.radiance(s.camera.ray(x, y, jx, jy).dir, c) / 2.0;
                }
                assert!((pt.get(x, y)[c] as f64 - expect).abs() < 1e-6);
            }
        }
    }
}

#[test]
fn zero_albedo_blacks_out_the_object() {
    let s = scene([60.0; 3], 0.0, [0.0; 3], false, 16);
    let (img, stats) = render(&s, Integrator::PathTracing, &RenderOptions::new(4, 1, false)).unwrap();
    assert_eq!(img.get(8, 8), [0.0; 3]);
    assert!(img.get(0, 0)[0] > 0.0);
    assert!(stats.max_steps <= 1);
}

#[test]
fn deterministic_and_thread_count_independent() {
    let s = scene([8.0, 4.0, 2.0], 0.5, [0.99, 0.95, 0.9], true, 10);
    let models = ScatterModels::<f32>::untrained(4);
    let opts = RenderOptions::new(3, 11, true);
    let run = |threads: usize, st: bool| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let integ = if st { Integrator::SphereTracing(&models) } else { Integrator::PathTracing };
            render(&s, integ, &opts).unwrap()
        })
    };
    for st in [false, true] {
        let (a, sa) = run(1, st);
        let (b, sb) = run(3, st);
        assert_eq!(a, b);
        assert_eq!(sa.steps, sb.steps);
        assert_eq!(sa.decoder_evals, sb.decoder_evals);
    }
}

#[test]
fn channels_render_independently() {
    let s = scene([8.0, 4.0, 2.0], 0.5, [0.99, 0.95, 0.9], true, 8);
    let mut opts = RenderOptions::new(4, 2, true);
    let (all, _) = render(&s, Integrator::PathTracing, &opts).unwrap();
    for c in 0..3 {
        opts.channels = [false; 3];
        opts.channels[c] = true;
        let (one, _) = render(&s, Integrator::PathTracing, &opts).unwrap();
        for (p, q) in all.pixels.iter().zip(&one.pixels) {
            assert_eq!(p[c], q[c]);
        }
    }
}

#[test]
fn decoder_count_matches_sphere_outcomes() {
    let s = scene([40.0, 20.0, 10.0], 0.2, [0.99, 0.9, 0.999], true, 8);
    let models = ScatterModels::<f32>::untrained(5);
    for nee in [false, true] {
        let (_, st) = render(&s, Integrator::SphereTracing(&models), &RenderOptions::new(4, 3, nee)).unwrap();
        assert!(st.spheres_survived + st.spheres_absorbed > 0);
        assert_eq!(st.decoder_evals, st.expected_decoder_evals(nee));
    }
}

#[test]
fn energy_bound_holds() {
    let s = scene([10.0, 5.0, 1.0], 0.7, [1.0, 0.99, 0.9], true, 8);
    let models = ScatterModels::<f32>::untrained(6);
    for integ in [Integrator::PathTracing, Integrator::SphereTracing(&models)] {
        for nee in [false, true] {
            let (img, st) = render(&s, integ, &RenderOptions::new(4, 4, nee)).unwrap();
            assert_eq!(st.energy_violations, 0);
            assert_eq!(st.dropped_paths, 0);
            assert!(img.is_finite());
        }
    }
}

#[test]
fn averages_agree_across_sample_counts() {
    let s = scene([6.0; 3], 0.3, [0.95; 3], false, 8);
    let (a, _) = render(&s, Integrator::PathTracing, &RenderOptions::new(16, 100, false)).unwrap();
    let (b, _) = render(&s, Integrator::PathTracing, &RenderOptions::new(512, 200, false)).unwrap();
    let mut outliers = 0;
    for (i, (p, q)) in a.pixels.iter().zip(&b.pixels).enumerate() {
        for c in 0..3 {
            let sd = ((a.variance[i][c] + b.variance[i][c]) as f64).sqrt();
            if (p[c] - q[c]).abs() as f64 > 4.0 * sd + 1e-6 {
                outliers += 1;
            }
        }
    }
    assert!(outliers <= 2, "{outliers} pixels disagree beyond 4 sigma");
    let (rmse, _) = image_metrics(&a, &b).unwrap();
    assert!(rmse < 0.1);
}

#[test]
fn rejects_bad_options() {
    let s = scene([1.0; 3], 0.0, [1.0; 3], false, 2);
    assert!(render(&s, Integrator::PathTracing, &RenderOptions::new(0, 0, false)).is_err());
    let mut o = RenderOptions::new(1, 0, false);
    o.r_min = Some(-1.0);
    assert!(render(&s, Integrator::PathTracing, &o).is_err());
}
