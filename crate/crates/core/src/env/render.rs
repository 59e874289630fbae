use super::{Observation, Rect, WorldConfig, WorldState, GLYPH_RADIUS};

pub const CHARGER_GRAY: u8 = 180;
const WHITE: u8 = 255;
const BLACK: u8 = 0;

const GLYPH_RINGS: [f64; 3] = [2.0, 4.0, 6.0];
const GLYPH_STROKE: f64 = 0.5;

/// Rasterizes the view square directly in front of the agent's nose.
///
/// The square is rotated into the agent frame and sampled at pixel centres:
/// row 0 is farthest from the agent, column 0 is on its left. Everything
/// outside the map is wall.
pub fn render_observation(cfg: &WorldConfig, state: &WorldState) -> Observation {
    let (w, h) = (cfg.view_width, cfg.view_height);
    let pose = state.agent;
    let (fx, fy) = pose.forward();
    let (rx, ry) = pose.right();
    let nose_x = pose.x + cfg.agent_radius * fx;
    let nose_y = pose.y + cfg.agent_radius * fy;
    let half = w as f64 / 2.0;

    let point = |fwd: f64, lat: f64| (nose_x + fx * fwd + rx * lat, nose_y + fy * fwd + ry * lat);
    let corners = [point(0.0, -half), point(0.0, half), point(h as f64, -half), point(h as f64, half)];
    let bounds = Rect {
        x0: corners.iter().map(|c| c.0).fold(f64::INFINITY, f64::min),
        y0: corners.iter().map(|c| c.1).fold(f64::INFINITY, f64::min),
        x1: corners.iter().map(|c| c.0).fold(f64::NEG_INFINITY, f64::max),
        y1: corners.iter().map(|c| c.1).fold(f64::NEG_INFINITY, f64::max),
    };
    let touches = |r: &Rect| r.x0 <= bounds.x1 && bounds.x0 <= r.x1 && r.y0 <= bounds.y1 && bounds.y0 <= r.y1;
    let obstacles: Vec<&Rect> = state.obstacles.iter().filter(|r| touches(r)).collect();
    let chargers: Vec<&Rect> = state.chargers.iter().filter(|r| touches(r)).collect();
    let reach = GLYPH_RADIUS + GLYPH_STROKE;
    let dirt: Vec<(f64, f64)> = state
        .dirt
        .iter()
        .copied()
        .filter(|&(x, y)| x + reach >= bounds.x0 && x - reach <= bounds.x1 && y + reach >= bounds.y0 && y - reach <= bounds.y1)
        .collect();

    let mut pixels = vec![WHITE; w * h];
    for row in 0..h {
        let fwd = (h - 1 - row) as f64 + 0.5;
        for col in 0..w {
            let lat = col as f64 + 0.5 - half;
            let (x, y) = point(fwd, lat);
            pixels[row * w + col] = shade(cfg, x, y, &obstacles, &chargers, &dirt);
        }
    }
    Observation { width: w, height: h, pixels }
}

fn shade(cfg: &WorldConfig, x: f64, y: f64, obstacles: &[&Rect], chargers: &[&Rect], dirt: &[(f64, f64)]) -> u8 {
    if x < 0.0 || y < 0.0 || x >= cfg.map_width || y >= cfg.map_height {
        return BLACK;
    }
    if obstacles.iter().any(|o| o.contains(x, y)) {
        return BLACK;
    }
    for &(dx, dy) in dirt {
        let d = ((x - dx).powi(2) + (y - dy).powi(2)).sqrt();
        if GLYPH_RINGS.iter().any(|r| (d - r).abs() <= GLYPH_STROKE) {
            return BLACK;
        }
    }
    if chargers.iter().any(|c| c.contains(x, y)) {
        return CHARGER_GRAY;
    }
    WHITE
}

#[cfg(test)]
mod tests {
    use super::super::{Cleaner, Pose};
    use super::*;

    fn staged(pose: Pose) -> (WorldConfig, WorldState) {
        let cfg = WorldConfig::default();
        let mut env = Cleaner::new(cfg.clone()).unwrap();
        env.reset(11).unwrap();
        let mut s = env.state().unwrap().clone();
        s.obstacles.clear();
        s.chargers.clear();
        s.dirt.clear();
        s.agent = pose;
        (cfg, s)
    }

    #[test]
    fn empty_view_is_white() {
        let (cfg, s) = staged(Pose { x: 200.0, y: 200.0, heading: 1.0 });
        let obs = render_observation(&cfg, &s);
        assert_eq!(obs.pixels.len(), 2500);
        assert!(obs.pixels.iter().all(|&p| p == 255));
    }

    #[test]
    fn wall_ahead_is_a_black_band() {
        // Nose at x = 380 facing +x: the wall at x = 400 is 20 px ahead.
        let (cfg, s) = staged(Pose { x: 370.0, y: 200.0, heading: 0.0 });
        let obs = render_observation(&cfg, &s);
        for row in 0..50 {
            let fwd = (49 - row) as f64 + 0.5;
            let expect = if fwd >= 20.0 { 0 } else { 255 };
            assert!(obs.pixels[row * 50..(row + 1) * 50].iter().all(|&p| p == expect), "row {row}");
        }
    }

    #[test]
    fn entities_render_with_their_colours() {
        let (cfg, mut s) = staged(Pose { x: 100.0, y: 100.0, heading: 0.0 });
        // Straight ahead lies +x; the agent's right is +y.
        s.chargers.push(Rect::new(115.0, 70.0, 20.0, 20.0)); // left side, near
        s.obstacles.push(Rect::new(140.0, 110.0, 20.0, 20.0)); // right side, far
        s.dirt.push((150.0, 100.0));
        let obs = render_observation(&cfg, &s);
        let px = |fwd: f64, lat: f64| {
            let row = 49 - (fwd.floor() as usize);
            let col = (lat + 25.0).floor() as usize;
            obs.pixels[row * 50 + col]
        };
        assert_eq!(px(15.0, -20.0), CHARGER_GRAY);
        assert_eq!(px(40.0, 15.0), 0);
        assert_eq!(px(40.0, 0.0), 255); // glyph centre is blank
        assert_eq!(px(43.0, 0.0), 0); // ring at radius 4
        assert_eq!(px(20.0, 0.0), 255);
        assert_eq!(obs, render_observation(&cfg, &s));
    }

    #[test]
    fn entities_outside_the_view_are_absent() {
        let (cfg, mut s) = staged(Pose { x: 100.0, y: 100.0, heading: 0.0 });
        s.obstacles.push(Rect::new(20.0, 20.0, 30.0, 30.0)); // behind the agent
        s.dirt.push((100.0, 160.0)); // to the side
        let obs = render_observation(&cfg, &s);
        assert!(obs.pixels.iter().all(|&p| p == 255));
    }
}
