//! GPS ingestion and the GPS/odometry switch.
//!
//! Fixes arrive as NMEA GGA sentences; they are checksum-validated, parsed
//! and converted to a local tangent frame. [`fuse_step`] runs the switching
//! logic: trusted fixes anchor the pose, everything else dead-reckons from
//! the last anchor using accumulated scan-matching motion. HDOP alone is not
//! a reliable failure indicator — multipath ghosts can carry a low HDOP — so
//! validity gating also checks the innovation against the odometry-predicted
//! position.

use crate::planar::{wrap_angle, PlanarMotion};
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum NmeaError {
    #[error("checksum mismatch")]
    BadChecksum,
    #[error("not a GGA sentence")]
    NotGga,
    #[error("malformed field {0}")]
    MalformedField(usize),
}

/// A parsed GGA fix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GpsFix {
    /// Seconds since midnight UTC.
    pub time_of_day: f64,
    /// Degrees, WGS-84; positive north.
    pub latitude: f64,
    /// Degrees, WGS-84; positive east.
    pub longitude: f64,
    /// 0 = invalid, 1 = GPS fix, 2 = differential.
    pub fix_quality: u8,
    pub satellites: u32,
    pub hdop: f64,
    /// Meters above mean sea level.
    pub altitude: f64,
}

fn checksum(payload: &str) -> u8 {
    payload.bytes().fold(0u8, |acc, b| acc ^ b)
}

/// Parses a GGA sentence, validating the `*hh` XOR checksum over the bytes
/// between `$` and `*`.
///
/// Quality-0 sentences may carry empty position fields (receivers emit them
/// during blackouts); those parse with zeroed position and HDOP.
pub fn parse_nmea_gga(sentence: &str) -> Result<GpsFix, NmeaError> {
    let s = sentence.trim();
    let body = s.strip_prefix('$').ok_or(NmeaError::MalformedField(0))?;
    let star = body.rfind('*').ok_or(NmeaError::BadChecksum)?;
    let (payload, check) = body.split_at(star);
    let check = &check[1..];
    if check.len() != 2 {
        return Err(NmeaError::BadChecksum);
    }
    let expected = u8::from_str_radix(check, 16).map_err(|_| NmeaError::BadChecksum)?;
    if checksum(payload) != expected {
        return Err(NmeaError::BadChecksum);
    }

    let fields: Vec<&str> = payload.split(',').collect();
    if !fields[0].ends_with("GGA") {
        return Err(NmeaError::NotGga);
    }
    if fields.len() < 10 {
        return Err(NmeaError::MalformedField(fields.len()));
    }

    let fix_quality: u8 = fields[6].parse().map_err(|_| NmeaError::MalformedField(6))?;
    if fix_quality > 2 {
        return Err(NmeaError::MalformedField(6));
    }
    let lenient = fix_quality == 0;

    let time_of_day = parse_hhmmss(fields[1]).ok_or(NmeaError::MalformedField(1))?;
    let latitude = match (fields[2], fields[3]) {
        ("", "") if lenient => 0.0,
        (value, hemi) => {
            let deg = parse_ddmm(value, 2).ok_or(NmeaError::MalformedField(2))?;
            match hemi {
                "N" => deg,
                "S" => -deg,
                _ => return Err(NmeaError::MalformedField(3)),
            }
        }
    };
    let longitude = match (fields[4], fields[5]) {
        ("", "") if lenient => 0.0,
        (value, hemi) => {
            let deg = parse_ddmm(value, 3).ok_or(NmeaError::MalformedField(4))?;
            match hemi {
                "E" => deg,
                "W" => -deg,
                _ => return Err(NmeaError::MalformedField(5)),
            }
        }
    };
    if latitude.abs() > 90.0 {
        return Err(NmeaError::MalformedField(2));
    }
    if longitude.abs() > 180.0 {
        return Err(NmeaError::MalformedField(4));
    }

    let satellites: u32 = if fields[7].is_empty() && lenient {
        0
    } else {
        fields[7].parse().map_err(|_| NmeaError::MalformedField(7))?
    };
    let hdop: f64 = if fields[8].is_empty() && lenient {
        0.0
    } else {
        fields[8].parse().map_err(|_| NmeaError::MalformedField(8))?
    };
    if hdop < 0.0 {
        return Err(NmeaError::MalformedField(8));
    }
    let altitude: f64 = if fields[9].is_empty() {
        0.0
    } else {
        fields[9].parse().map_err(|_| NmeaError::MalformedField(9))?
    };

    Ok(GpsFix { time_of_day, latitude, longitude, fix_quality, satellites, hdop, altitude })
}

fn parse_hhmmss(field: &str) -> Option<f64> {
    if field.is_empty() {
        return Some(0.0);
    }
    if field.len() < 6 {
        return None;
    }
    let h: f64 = field[0..2].parse().ok()?;
    let m: f64 = field[2..4].parse().ok()?;
    let s: f64 = field[4..].parse().ok()?;
    Some(h * 3600.0 + m * 60.0 + s)
}

/// `ddmm.mmmm` (or `dddmm.mmmm` for longitude) → decimal degrees.
fn parse_ddmm(field: &str, deg_digits: usize) -> Option<f64> {
    if field.len() < deg_digits + 2 {
        return None;
    }
    let deg: f64 = field[..deg_digits].parse().ok()?;
    let minutes: f64 = field[deg_digits..].parse().ok()?;
    if minutes < 0.0 || minutes >= 60.0 {
        return None;
    }
    Some(deg + minutes / 60.0)
}

/// Serializes a fix back to a GGA sentence with a valid checksum.
pub fn format_gga(fix: &GpsFix) -> String {
    let h = (fix.time_of_day / 3600.0).floor();
    let m = ((fix.time_of_day - h * 3600.0) / 60.0).floor();
    let s = fix.time_of_day - h * 3600.0 - m * 60.0;
    let lat_abs = fix.latitude.abs();
    let lat_deg = lat_abs.floor();
    let lat_min = (lat_abs - lat_deg) * 60.0;
    let lon_abs = fix.longitude.abs();
    let lon_deg = lon_abs.floor();
    let lon_min = (lon_abs - lon_deg) * 60.0;
    let mut payload = String::with_capacity(72);
    let _ = write!(
        payload,
        "GPGGA,{:02}{:02}{:05.2},{:02}{:09.6},{},{:03}{:09.6},{},{},{:02},{:.2},{:.2},M,0.0,M,,",
        h as u32,
        m as u32,
        s,
        lat_deg as u32,
        lat_min,
        if fix.latitude >= 0.0 { 'N' } else { 'S' },
        lon_deg as u32,
        lon_min,
        if fix.longitude >= 0.0 { 'E' } else { 'W' },
        fix.fix_quality,
        fix.satellites,
        fix.hdop,
        fix.altitude,
    );
    let cs = checksum(&payload);
    format!("${payload}*{cs:02X}")
}

// WGS-84 ellipsoid.
const WGS84_A: f64 = 6_378_137.0;
const WGS84_F: f64 = 1.0 / 298.257_223_563;

/// Meridian and normal curvature radii at a latitude, meters.
fn curvature_radii(lat_deg: f64) -> (f64, f64) {
    let e2 = WGS84_F * (2.0 - WGS84_F);
    let sin = lat_deg.to_radians().sin();
    let denom = 1.0 - e2 * sin * sin;
    let meridian = WGS84_A * (1.0 - e2) / denom.powf(1.5);
    let normal = WGS84_A / denom.sqrt();
    (meridian, normal)
}

/// Local tangent-plane conversion: east/north meters of a fix relative to a
/// reference point. At canal scale (< 10 km) the flat-plane approximation is
/// good to centimeters.
pub fn geodetic_to_local(fix: &GpsFix, ref_lat: f64, ref_lon: f64) -> (f64, f64) {
    let (meridian, normal) = curvature_radii(ref_lat);
    let y = (fix.latitude - ref_lat).to_radians() * meridian;
    let x = (fix.longitude - ref_lon).to_radians() * normal * ref_lat.to_radians().cos();
    (x, y)
}

/// Inverse of [`geodetic_to_local`] (used by the simulator's GPS model).
pub fn local_to_geodetic(x: f64, y: f64, ref_lat: f64, ref_lon: f64) -> (f64, f64) {
    let (meridian, normal) = curvature_radii(ref_lat);
    let lat = ref_lat + (y / meridian).to_degrees();
    let lon = ref_lon + (x / (normal * ref_lat.to_radians().cos())).to_degrees();
    (lat, lon)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoseSource {
    Gps,
    Lidar,
    Fused,
}

impl PoseSource {
    pub fn as_str(&self) -> &'static str {
        match self {
            PoseSource::Gps => "gps",
            PoseSource::Lidar => "lidar",
            PoseSource::Fused => "fused",
        }
    }
}

impl std::str::FromStr for PoseSource {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gps" => Ok(PoseSource::Gps),
            "lidar" => Ok(PoseSource::Lidar),
            "fused" => Ok(PoseSource::Fused),
            other => Err(format!("unknown pose source `{other}`")),
        }
    }
}

/// A timed 2-D pose in the local east-north frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalPose {
    pub t: f64,
    /// East, meters.
    pub x: f64,
    /// North, meters.
    pub y: f64,
    /// Radians, wrapped to (−π, π].
    pub yaw: f64,
    pub source: PoseSource,
}

impl LocalPose {
    pub fn new(t: f64, x: f64, y: f64, yaw: f64, source: PoseSource) -> Self {
        Self { t, x, y, yaw: wrap_angle(yaw), source }
    }

    pub fn origin(t: f64) -> Self {
        Self::new(t, 0.0, 0.0, 0.0, PoseSource::Gps)
    }

    pub fn distance_to(&self, other: &LocalPose) -> f64 {
        ((self.x - other.x).powi(2) + (self.y - other.y).powi(2)).sqrt()
    }
}

/// Advances a pose by a vehicle-frame relative motion: yaw adds (wrapped),
/// the translation is rotated into the local frame by the *prior* yaw.
pub fn integrate_odometry(pose: &LocalPose, rel: &PlanarMotion) -> LocalPose {
    let (sin, cos) = pose.yaw.sin_cos();
    LocalPose {
        t: pose.t,
        x: pose.x + cos * rel.dx - sin * rel.dy,
        y: pose.y + sin * rel.dx + cos * rel.dy,
        yaw: wrap_angle(pose.yaw + rel.yaw),
        source: PoseSource::Lidar,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GpsTrust {
    Trusted,
    Suspect,
    Lost,
}

#[derive(Debug, Clone)]
pub struct FusionConfig {
    /// HDOP above this marks the fix suspect.
    pub hdop_threshold: f64,
    /// Innovation gate: a fix farther than this from the odometry-predicted
    /// position is suspect even with a clean HDOP.
    pub jump_gate: f64,
    /// Hard bound on output position speed, m/s.
    pub max_speed: f64,
    /// Number of trusted fixes over which the output blends back from the
    /// odometric pose to GPS after a gap.
    pub reanchor_blend: u32,
    /// Seconds of GPS-free dead reckoning after which the state raises its
    /// unbounded-drift warning flag.
    pub dead_reckoning_warn: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            hdop_threshold: 2.0,
            jump_gate: 5.0,
            max_speed: 5.0,
            reanchor_blend: 5,
            dead_reckoning_warn: 30.0,
        }
    }
}

/// Classifies a fix: `Lost` without a usable fix, `Suspect` when HDOP is too
/// high *or* the fix jumps away from the odometry-predicted position,
/// `Trusted` otherwise.
pub fn gps_validity(
    fix: Option<&GpsFix>,
    predicted: &LocalPose,
    cfg: &FusionConfig,
    ref_lat: f64,
    ref_lon: f64,
) -> GpsTrust {
    let Some(fix) = fix else {
        return GpsTrust::Lost;
    };
    if fix.fix_quality == 0 {
        return GpsTrust::Lost;
    }
    if fix.hdop > cfg.hdop_threshold {
        return GpsTrust::Suspect;
    }
    let (x, y) = geodetic_to_local(fix, ref_lat, ref_lon);
    let innovation = ((x - predicted.x).powi(2) + (y - predicted.y).powi(2)).sqrt();
    if innovation > cfg.jump_gate {
        return GpsTrust::Suspect;
    }
    GpsTrust::Trusted
}

/// The switching filter state. Values are snapshots: [`fuse_step`] consumes
/// one and produces the next, so the trust machine only ever advances
/// through it.
#[derive(Debug, Clone)]
pub struct FusedState {
    pub pose: LocalPose,
    pub gps_trust: GpsTrust,
    /// Last trusted GPS pose; dead reckoning accumulates from here.
    pub anchor: LocalPose,
    /// Scan-matching chain since the anchor, in the anchor frame.
    pub odometry_since_anchor: PlanarMotion,
    /// Pairs accumulated in the chain.
    pub odometry_pairs: usize,
    /// True once odometry alone has run longer than the configured warning
    /// duration — drift is unbounded from the anchor onward.
    pub dead_reckoning_only: bool,
    blend_left: u32,
    blend_offset: (f64, f64),
    last_trusted_t: f64,
}

impl FusedState {
    /// Bootstraps the filter at a known pose (normally the first trusted
    /// fix; the simulator's local origin also works).
    pub fn anchored_at(pose: LocalPose) -> Self {
        let anchor = LocalPose { source: PoseSource::Gps, ..pose };
        Self {
            pose: anchor,
            gps_trust: GpsTrust::Trusted,
            anchor,
            odometry_since_anchor: PlanarMotion::identity(),
            odometry_pairs: 0,
            dead_reckoning_only: false,
            blend_left: 0,
            blend_offset: (0.0, 0.0),
            last_trusted_t: pose.t,
        }
    }
}

/// One step of the GPS/odometry switch.
///
/// * Trusted fix → pose snaps to GPS (blending after a gap), the anchor
///   moves, the odometry chain resets.
/// * Suspect or lost → pose = anchor ⊕ accumulated odometry.
/// * Recovery after a gap → the output approaches the GPS track linearly
///   over `reanchor_blend` fixes, marked `fused`.
///
/// The output position never steps faster than `max_speed·Δt`, which is what
/// keeps the fused trajectory free of the discontinuities a raw GPS track
/// shows under bridges.
pub fn fuse_step(
    state: &FusedState,
    t: f64,
    gps: Option<&GpsFix>,
    odom: Option<&PlanarMotion>,
    cfg: &FusionConfig,
    ref_lat: f64,
    ref_lon: f64,
) -> FusedState {
    debug_assert!(gps.is_some() || odom.is_some(), "fuse_step needs at least one input");
    debug_assert!(t >= state.pose.t, "timestamps must be non-decreasing");
    let dt = (t - state.pose.t).max(0.0);

    // Advance the dead-reckoning chain.
    let chain = match odom {
        Some(rel) => state.odometry_since_anchor.compose(rel),
        None => state.odometry_since_anchor,
    };
    let pairs = state.odometry_pairs + odom.is_some() as usize;
    let predicted_t = integrate_odometry(&state.anchor, &chain);
    let predicted = LocalPose { t, ..predicted_t };

    let verdict = gps_validity(gps, &predicted, cfg, ref_lat, ref_lon);

    let mut next = state.clone();
    next.odometry_since_anchor = chain;
    next.odometry_pairs = pairs;
    next.gps_trust = verdict;

    let (target_x, target_y, target_yaw, source) = match verdict {
        GpsTrust::Trusted => {
            let fix = gps.expect("trusted implies a fix");
            let (gx, gy) = geodetic_to_local(fix, ref_lat, ref_lon);
            if state.gps_trust != GpsTrust::Trusted {
                // Recovery: remember the odometry-vs-GPS discrepancy and
                // bleed it off over the next few fixes.
                next.blend_left = cfg.reanchor_blend;
                next.blend_offset = (predicted.x - gx, predicted.y - gy);
            }
            if next.blend_left > 0 {
                next.blend_left -= 1;
                let frac = next.blend_left as f64 / cfg.reanchor_blend as f64;
                let source = if next.blend_left > 0 { PoseSource::Fused } else { PoseSource::Gps };
                (gx + next.blend_offset.0 * frac, gy + next.blend_offset.1 * frac, predicted.yaw, source)
            } else {
                (gx, gy, predicted.yaw, PoseSource::Gps)
            }
        }
        GpsTrust::Suspect | GpsTrust::Lost => {
            // Cancel any in-progress blend; a fresh offset is computed on
            // the next recovery.
            next.blend_left = 0;
            (predicted.x, predicted.y, predicted.yaw, PoseSource::Lidar)
        }
    };

    // Step bound: never move faster than the vehicle can.
    let step_x = target_x - state.pose.x;
    let step_y = target_y - state.pose.y;
    let step = (step_x * step_x + step_y * step_y).sqrt();
    let max_step = cfg.max_speed * dt;
    let (out_x, out_y) = if step > max_step && step > 0.0 {
        let scale = max_step / step;
        (state.pose.x + step_x * scale, state.pose.y + step_y * scale)
    } else {
        (target_x, target_y)
    };

    next.pose = LocalPose::new(t, out_x, out_y, target_yaw, source);

    if verdict == GpsTrust::Trusted {
        // Re-anchor at the output pose (it was produced under a trusted
        // fix), reset the chain.
        next.anchor = LocalPose { source: PoseSource::Gps, ..next.pose };
        next.odometry_since_anchor = PlanarMotion::identity();
        next.odometry_pairs = 0;
        next.last_trusted_t = t;
        next.dead_reckoning_only = false;
    } else {
        next.dead_reckoning_only = t - next.last_trusted_t > cfg.dead_reckoning_warn;
    }
    next
}

/// Reads a GPS log: one `<epoch_seconds> <NMEA sentence>` event per line.
pub fn parse_gps_log(text: &str) -> Result<Vec<(f64, String)>, NmeaError> {
    let mut out = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (stamp, sentence) = line.split_once(' ').ok_or(NmeaError::MalformedField(0))?;
        let t: f64 = stamp.parse().map_err(|_| NmeaError::MalformedField(0))?;
        out.push((t, sentence.to_string()));
    }
    Ok(out)
}

pub fn format_gps_log(events: &[(f64, String)]) -> String {
    let mut out = String::new();
    for (t, sentence) in events {
        let _ = writeln!(out, "{t:.6} {sentence}");
    }
    out
}

/// Trajectory CSV: `t,x,y,yaw,source`, six decimal places.
pub fn format_trajectory_csv(poses: &[LocalPose]) -> String {
    let mut out = String::from("t,x,y,yaw,source\n");
    for p in poses {
        let _ = writeln!(out, "{:.6},{:.6},{:.6},{:.6},{}", p.t, p.x, p.y, p.yaw, p.source.as_str());
    }
    out
}

pub fn parse_trajectory_csv(text: &str) -> Result<Vec<LocalPose>, String> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            if line != "t,x,y,yaw,source" {
                return Err(format!("unexpected header `{line}`"));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(format!("line {}: expected 5 fields", i + 1));
        }
        let parse = |s: &str| s.parse::<f64>().map_err(|_| format!("line {}: bad number `{s}`", i + 1));
        out.push(LocalPose::new(
            parse(fields[0])?,
            parse(fields[1])?,
            parse(fields[2])?,
            parse(fields[3])?,
            fields[4].parse().map_err(|e| format!("line {}: {e}", i + 1))?,
        ));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    const SAMPLE: &str = "$GPGGA,123519,4807.038,N,01131.000,E,1,08,0.9,545.4,M,46.9,M,,*47";

    #[test]
    fn parses_the_classic_gga_sentence() {
        let fix = parse_nmea_gga(SAMPLE).unwrap();
        assert_relative_eq!(fix.time_of_day, 12.0 * 3600.0 + 35.0 * 60.0 + 19.0);
        assert_relative_eq!(fix.latitude, 48.0 + 7.038 / 60.0, epsilon = 1e-12);
        assert_relative_eq!(fix.longitude, 11.0 + 31.0 / 60.0, epsilon = 1e-12);
        assert_eq!(fix.fix_quality, 1);
        assert_eq!(fix.satellites, 8);
        assert_relative_eq!(fix.hdop, 0.9);
        assert_relative_eq!(fix.altitude, 545.4);
    }

    #[test]
    fn rejects_wrong_checksum() {
        let bad = SAMPLE.replace("*47", "*48");
        assert_eq!(parse_nmea_gga(&bad).unwrap_err(), NmeaError::BadChecksum);
    }

    #[test]
    fn rejects_non_gga() {
        // RMC sentence with its correct checksum.
        let rmc = "$GPRMC,123519,A,4807.038,N,01131.000,E,022.4,084.4,230394,003.1,W*6A";
        assert_eq!(parse_nmea_gga(rmc).unwrap_err(), NmeaError::NotGga);
    }

    #[test]
    fn rejects_malformed_fields() {
        // Latitude hemisphere garbled (checksum recomputed to stay valid).
        let mut payload = "GPGGA,123519,4807.038,Q,01131.000,E,1,08,0.9,545.4,M,46.9,M,,".to_string();
        let cs = payload.bytes().fold(0u8, |a, b| a ^ b);
        payload = format!("${payload}*{cs:02X}");
        assert_eq!(parse_nmea_gga(&payload).unwrap_err(), NmeaError::MalformedField(3));
    }

    #[test]
    fn round_trips_through_format() {
        let fix = GpsFix {
            time_of_day: 45296.25,
            latitude: 42.361234,
            longitude: -71.087654,
            fix_quality: 1,
            satellites: 9,
            hdop: 1.25,
            altitude: 3.5,
        };
        let sentence = format_gga(&fix);
        let back = parse_nmea_gga(&sentence).unwrap();
        assert!((back.latitude - fix.latitude).abs() < 1e-7);
        assert!((back.longitude - fix.longitude).abs() < 1e-7);
        assert!((back.time_of_day - fix.time_of_day).abs() < 0.011);
        assert_eq!(back.fix_quality, fix.fix_quality);
        assert_eq!(back.satellites, fix.satellites);
        assert!((back.hdop - fix.hdop).abs() < 1e-9);
    }

    #[test]
    fn geodetic_conversion_matches_curvature_radii() {
        let fix_at = |lat: f64, lon: f64| GpsFix {
            time_of_day: 0.0,
            latitude: lat,
            longitude: lon,
            fix_quality: 1,
            satellites: 8,
            hdop: 1.0,
            altitude: 0.0,
        };
        let (x0, y0) = geodetic_to_local(&fix_at(42.0, -71.0), 42.0, -71.0);
        assert_eq!((x0, y0), (0.0, 0.0));

        let (_, y) = geodetic_to_local(&fix_at(42.00001, -71.0), 42.0, -71.0);
        assert!((y - 1.11).abs() < 0.01, "y = {y}");

        let (x, _) = geodetic_to_local(&fix_at(42.0, -70.99999), 42.0, -71.0);
        assert!((x - 0.83).abs() < 0.01, "x = {x}");

        // Inverse round trip.
        let (lat, lon) = local_to_geodetic(123.4, -56.7, 42.0, -71.0);
        let (x2, y2) = geodetic_to_local(&fix_at(lat, lon), 42.0, -71.0);
        assert!((x2 - 123.4).abs() < 1e-6 && (y2 + 56.7).abs() < 1e-6);
    }

    #[test]
    fn integrates_vehicle_frame_motion() {
        let rel = PlanarMotion { yaw: 0.0, dx: 1.0, dy: 0.0, score: 1.0 };
        let p0 = LocalPose::new(0.0, 0.0, 0.0, 0.0, PoseSource::Gps);
        let p1 = integrate_odometry(&p0, &rel);
        assert_relative_eq!(p1.x, 1.0);
        assert_relative_eq!(p1.y, 0.0);

        let turned = LocalPose::new(0.0, 0.0, 0.0, std::f64::consts::FRAC_PI_2, PoseSource::Gps);
        let p2 = integrate_odometry(&turned, &rel);
        assert!(p2.x.abs() < 1e-12);
        assert_relative_eq!(p2.y, 1.0);
        assert_relative_eq!(p2.yaw, std::f64::consts::FRAC_PI_2);
        assert_eq!(p2.source, PoseSource::Lidar);
    }

    #[test]
    fn chained_motions_equal_composed_transform() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(13);
        let rels: Vec<PlanarMotion> = (0..50)
            .map(|_| PlanarMotion {
                yaw: rng.random_range(-0.3..0.3),
                dx: rng.random_range(-1.0..1.0),
                dy: rng.random_range(-1.0..1.0),
                score: 1.0,
            })
            .collect();
        let mut pose = LocalPose::new(0.0, 0.0, 0.0, 0.0, PoseSource::Gps);
        let mut chain = crate::geometry::RigidTransform::identity();
        for rel in &rels {
            pose = integrate_odometry(&pose, rel);
            chain = chain.compose(&rel.to_transform());
        }
        assert!((pose.x - chain.translation.x).abs() < 1e-9);
        assert!((pose.y - chain.translation.y).abs() < 1e-9);
        let (yaw, _, _) = chain.euler_zyx();
        assert!((wrap_angle(pose.yaw - yaw)).abs() < 1e-9);
    }

    fn fix_near(x: f64, y: f64, hdop: f64) -> GpsFix {
        let (lat, lon) = local_to_geodetic(x, y, 42.0, -71.0);
        GpsFix {
            time_of_day: 0.0,
            latitude: lat,
            longitude: lon,
            fix_quality: 1,
            satellites: 8,
            hdop,
            altitude: 0.0,
        }
    }

    #[test]
    fn validity_verdicts() {
        let cfg = FusionConfig::default();
        let predicted = LocalPose::new(0.0, 0.0, 0.0, 0.0, PoseSource::Lidar);

        assert_eq!(gps_validity(None, &predicted, &cfg, 42.0, -71.0), GpsTrust::Lost);

        let mut dead = fix_near(0.0, 0.0, 0.9);
        dead.fix_quality = 0;
        assert_eq!(gps_validity(Some(&dead), &predicted, &cfg, 42.0, -71.0), GpsTrust::Lost);

        let hazy = fix_near(0.0, 0.0, 5.0);
        assert_eq!(gps_validity(Some(&hazy), &predicted, &cfg, 42.0, -71.0), GpsTrust::Suspect);

        // Clean HDOP but 30 m from the odometry prediction: still suspect.
        let ghost = fix_near(30.0, 0.0, 0.9);
        assert_eq!(gps_validity(Some(&ghost), &predicted, &cfg, 42.0, -71.0), GpsTrust::Suspect);

        let good = fix_near(1.0, -1.0, 0.9);
        assert_eq!(gps_validity(Some(&good), &predicted, &cfg, 42.0, -71.0), GpsTrust::Trusted);
    }

    #[test]
    fn trusted_stream_follows_gps() {
        let cfg = FusionConfig::default();
        let mut state = FusedState::anchored_at(LocalPose::origin(0.0));
        for k in 1..=10 {
            let t = k as f64;
            let fix = fix_near(2.0 * t, 0.0, 0.9);
            let odom = PlanarMotion { yaw: 0.0, dx: 2.0, dy: 0.0, score: 1.0 };
            state = fuse_step(&state, t, Some(&fix), Some(&odom), &cfg, 42.0, -71.0);
            assert_eq!(state.pose.source, PoseSource::Gps);
            assert!((state.pose.x - 2.0 * t).abs() < 1e-6, "t={t}: x={}", state.pose.x);
        }
    }

    #[test]
    fn blackout_dead_reckons_and_recovery_blends() {
        let cfg = FusionConfig::default();
        let mut state = FusedState::anchored_at(LocalPose::origin(0.0));
        let odom = PlanarMotion { yaw: 0.0, dx: 1.0, dy: 0.0, score: 1.0 };

        // 10 s of odometry only.
        for k in 1..=10 {
            state = fuse_step(&state, k as f64, None, Some(&odom), &cfg, 42.0, -71.0);
            assert_eq!(state.pose.source, PoseSource::Lidar);
        }
        assert!((state.pose.x - 10.0).abs() < 1e-9);

        // GPS returns 3 m off the odometric estimate; convergence is
        // monotone and complete after reanchor_blend fixes.
        let mut last_gap = (state.pose.x - 13.0).abs();
        for k in 11..=15 {
            let t = k as f64;
            // GPS says the vehicle is at 3 + t: it kept moving, 3 m off the
            // odometric estimate.
            let fix = fix_near(3.0 + t, 0.0, 0.9);
            state = fuse_step(&state, t, Some(&fix), Some(&odom), &cfg, 42.0, -71.0);
            let gap = (state.pose.x - (3.0 + t)).abs();
            assert!(gap <= last_gap + 1e-9, "gap grew: {gap} > {last_gap}");
            last_gap = gap;
            if k < 15 {
                assert_eq!(state.pose.source, PoseSource::Fused);
            }
        }
        assert_eq!(state.pose.source, PoseSource::Gps);
        assert!(last_gap < 1e-6, "blend did not converge: {last_gap}");
    }

    #[test]
    fn steps_are_speed_bounded() {
        let cfg = FusionConfig::default();
        let mut state = FusedState::anchored_at(LocalPose::origin(0.0));
        let odom = PlanarMotion { yaw: 0.0, dx: 0.2, dy: 0.0, score: 1.0 };
        let mut prev = state.pose;
        for k in 1..=100 {
            let t = k as f64 * 0.1;
            // A wildly-jumping GPS during multipath is gated Suspect, but
            // even trusted fixes cannot drag the pose faster than max_speed.
            let fix = fix_near(0.2 * k as f64 + 0.3, 0.0, 0.9);
            state = fuse_step(&state, t, Some(&fix), Some(&odom), &cfg, 42.0, -71.0);
            let step = state.pose.distance_to(&prev);
            assert!(step <= cfg.max_speed * 0.1 + 1e-9, "step {step} too large");
            prev = state.pose;
        }
    }

    #[test]
    fn dead_reckoning_flag_raises_after_warn_duration() {
        let cfg = FusionConfig { dead_reckoning_warn: 5.0, ..Default::default() };
        let mut state = FusedState::anchored_at(LocalPose::origin(0.0));
        let odom = PlanarMotion { yaw: 0.0, dx: 0.5, dy: 0.0, score: 1.0 };
        for k in 1..=4 {
            state = fuse_step(&state, k as f64, None, Some(&odom), &cfg, 42.0, -71.0);
            assert!(!state.dead_reckoning_only);
        }
        for k in 6..=8 {
            state = fuse_step(&state, k as f64, None, Some(&odom), &cfg, 42.0, -71.0);
            assert!(state.dead_reckoning_only, "flag not raised at t={k}");
        }
    }

    #[test]
    fn trajectory_csv_round_trips() {
        let poses = vec![
            LocalPose::new(0.0, 1.5, -2.25, 0.1, PoseSource::Gps),
            LocalPose::new(0.1, 1.6, -2.0, 0.125, PoseSource::Lidar),
            LocalPose::new(0.2, 1.7, -1.75, 0.15, PoseSource::Fused),
        ];
        let text = format_trajectory_csv(&poses);
        let back = parse_trajectory_csv(&text).unwrap();
        assert_eq!(back.len(), poses.len());
        for (a, b) in poses.iter().zip(back.iter()) {
            assert!((a.x - b.x).abs() < 1e-6 && (a.y - b.y).abs() < 1e-6);
            assert_eq!(a.source, b.source);
        }
    }
}
