use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use scanbridge::geometry::{apply_transform, Point3, PointCloud, RigidTransform};
use scanbridge::planar::{
    apply_hann_window, project_to_image, rotate_about_center, smooth_binomial, Fft2d,
    ProjectionCanvas, ProjectionImage,
};

fn walls_cloud(seed: u64) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::new();
    for i in 0..1500 {
        let x = -40.0 + 80.0 * (i as f64 / 1500.0);
        points.push(Point3::new(x, 11.0 + rng.random_range(-0.05..0.05), rng.random_range(0.0..3.0), 0.5));
        points.push(Point3::new(x, -12.5 + rng.random_range(-0.05..0.05), rng.random_range(0.0..3.0), 0.5));
    }
    PointCloud::new(points, 0.0, "")
}

fn pillars_cloud(seed: u64) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::new();
    for (px, py) in [(18.0, 4.0), (-10.0, -6.0), (25.0, -8.0), (-25.0, 9.0), (5.0, -15.0)] {
        for _ in 0..600 {
            let a = rng.random_range(0.0..std::f64::consts::TAU);
            points.push(Point3::new(px + 0.8 * a.cos(), py + 0.8 * a.sin(), rng.random_range(0.0..6.0), 0.8));
        }
    }
    PointCloud::new(points, 0.0, "")
}

fn argmax_theta(a: &ProjectionImage, b: &ProjectionImage) -> (f64, f64) {
    let (w, h) = (a.width(), a.height());
    let fft = Fft2d::new(w, h);
    let mut best = (0.0f64, f64::NEG_INFINITY);
    for k in -20..=120i64 {
        let theta = (k as f64 * 0.05).to_radians();
        let ha = smooth_binomial(&rotate_about_center(a, theta / 2.0));
        let hb = smooth_binomial(&rotate_about_center(b, -theta / 2.0));
        let fa = fft.forward(apply_hann_window(&ha).values());
        let fb = fft.forward(apply_hann_window(&hb).values());
        let (mut spec, _) = scanbridge::planar::debug_cross_power(&fa, &fb);
        let kept = scanbridge::planar::debug_lowpass(&mut spec, w, h, 0.25);
        let peak = scanbridge::planar::debug_peak(&fft, spec, w, h, kept);
        if peak > best.1 {
            best = (theta.to_degrees(), peak);
        }
    }
    best
}

fn characterize(label: &str, cloud: &PointCloud) {
    let canvas = ProjectionCanvas::default();
    let a = project_to_image(cloud, &canvas);
    print!("{label}: ");
    for psi_deg in [0.5, 1.0, 2.0, 4.0] {
        let rot = RigidTransform::from_yaw((psi_deg as f64).to_radians(), nalgebra::Vector3::zeros());
        let b = project_to_image(&apply_transform(&rot, cloud), &canvas);
        let (theta, peak) = argmax_theta(&a, &b);
        print!("ψ={psi_deg}°→θ*={theta:.2}° (pk {peak:.3})  ");
    }
    println!();
}

fn main() {
    characterize("walls only ", &walls_cloud(6));
    characterize("pillars    ", &pillars_cloud(7));
}
