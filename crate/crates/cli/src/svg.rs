//! Minimal SVG line plots.

use std::fmt::Write as _;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 110.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;

/// One polyline.
#[derive(Debug, Clone)]
pub struct Curve {
    pub points: Vec<(f64, f64)>,
    pub color: &'static str,
    pub width: f64,
    pub dashed: bool,
    pub opacity: f64,
    /// Text drawn next to the last point.
    pub label: Option<String>,
}

impl Curve {
    pub fn new(points: Vec<(f64, f64)>, color: &'static str) -> Self {
        Self { points, color, width: 1.5, dashed: false, opacity: 1.0, label: None }
    }

    pub fn dashed(mut self) -> Self {
        self.dashed = true;
        self
    }

    pub fn thin(mut self, opacity: f64) -> Self {
        self.width = 0.6;
        self.opacity = opacity;
        self
    }

    pub fn labeled(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }
}

#[derive(Debug, Clone, Default)]
pub struct Plot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    /// Base-10 logarithmic y axis; non-positive values are dropped.
    pub log_y: bool,
    /// Fixed x tick positions; evenly spaced ticks otherwise.
    pub x_ticks: Option<Vec<f64>>,
    pub curves: Vec<Curve>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn nice(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.abs() >= 1e4 || v.abs() < 1e-2 {
        format!("{v:.1e}")
    } else {
        let s = format!("{v:.3}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

impl Plot {
    pub fn new(title: impl Into<String>, x_label: impl Into<String>, y_label: impl Into<String>) -> Self {
        Self { title: title.into(), x_label: x_label.into(), y_label: y_label.into(), ..Default::default() }
    }

    fn ty(&self, y: f64) -> Option<f64> {
        if self.log_y {
            (y > 0.0).then(|| y.log10())
        } else {
            Some(y)
        }
        .filter(|v| v.is_finite())
    }

    /// Renders the plot; `None` if no curve has a drawable point.
    pub fn render(&self) -> Option<String> {
        let pts: Vec<(f64, f64)> = self
            .curves
            .iter()
            .flat_map(|c| c.points.iter().filter_map(|&(x, y)| Some((x, self.ty(y)?))))
            .filter(|(x, _)| x.is_finite())
            .collect();
        if pts.is_empty() {
            return None;
        }
        let fold = |f: fn(f64, f64) -> f64, init: f64, sel: fn(&(f64, f64)) -> f64| pts.iter().map(sel).fold(init, f);
        let (mut x0, mut x1) = (fold(f64::min, f64::INFINITY, |p| p.0), fold(f64::max, f64::NEG_INFINITY, |p| p.0));
        let (mut y0, mut y1) = (fold(f64::min, f64::INFINITY, |p| p.1), fold(f64::max, f64::NEG_INFINITY, |p| p.1));
        if let Some(t) = &self.x_ticks {
            x0 = t.iter().copied().fold(x0, f64::min);
            x1 = t.iter().copied().fold(x1, f64::max);
        }
        if x1 == x0 {
            x0 -= 0.5;
            x1 += 0.5;
        }
        if y1 == y0 {
            let pad = if y0 == 0.0 { 1.0 } else { 0.1 * y0.abs() };
            y0 -= pad;
            y1 += pad;
        }
        let pad = 0.05 * (y1 - y0);
        let (y0, y1) = (y0 - pad, y1 + pad);
        let (pw, ph) = (WIDTH - LEFT - RIGHT, HEIGHT - TOP - BOTTOM);
        let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
        let sy = |y: f64| TOP + (y1 - y) / (y1 - y0) * ph;

        let mut s = String::new();
        let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#);
        let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#, WIDTH / 2.0, escape(&self.title));
        let _ = writeln!(s, r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#);
        let x_ticks = self.x_ticks.clone().unwrap_or_else(|| (0..=5).map(|i| x0 + (x1 - x0) * i as f64 / 5.0).collect());
        for x in x_ticks {
            let px = sx(x);
            let _ = writeln!(s, r#"<line x1="{px:.2}" y1="{}" x2="{px:.2}" y2="{}" stroke="black"/>"#, TOP + ph, TOP + ph + 5.0);
            let _ = writeln!(s, r#"<text x="{px:.2}" y="{}" text-anchor="middle">{}</text>"#, TOP + ph + 18.0, nice(x));
        }
        for i in 0..=5 {
            let y = y0 + (y1 - y0) * i as f64 / 5.0;
            let py = sy(y);
            let text = if self.log_y { format!("1e{y:.1}") } else { nice(y) };
            let _ = writeln!(s, r#"<line x1="{}" y1="{py:.2}" x2="{LEFT}" y2="{py:.2}" stroke="black"/>"#, LEFT - 5.0);
            let _ = writeln!(s, r#"<text x="{}" y="{:.2}" text-anchor="end">{text}</text>"#, LEFT - 8.0, py + 4.0);
        }
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, LEFT + pw / 2.0, HEIGHT - 15.0, escape(&self.x_label));
        let _ = writeln!(
            s,
            r#"<text x="20" y="{0}" text-anchor="middle" transform="rotate(-90 20 {0})">{1}</text>"#,
            TOP + ph / 2.0,
            escape(&self.y_label)
        );
        for c in &self.curves {
            let path: Vec<String> = c
                .points
                .iter()
                .filter_map(|&(x, y)| Some((x, self.ty(y)?)))
                .map(|(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
                .collect();
            if path.is_empty() {
                continue;
            }
            let dash = if c.dashed { r#" stroke-dasharray="6 4""# } else { "" };
            let _ = writeln!(
                s,
                r#"<polyline fill="none" stroke="{}" stroke-width="{}" stroke-opacity="{}"{dash} points="{}"/>"#,
                c.color,
                c.width,
                c.opacity,
                path.join(" ")
            );
            if let (Some(label), Some(last)) = (&c.label, path.last()) {
                let (lx, ly) = last.split_once(',').expect("formatted as x,y");
                let _ = writeln!(s, r#"<text x="{}" y="{ly}" fill="{}">{}</text>"#, lx.parse::<f64>().unwrap_or(0.0) + 6.0, c.color, escape(label));
            }
        }
        s.push_str("</svg>\n");
        Some(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dashed_curves_are_marked() {
        let mut p = Plot::new("t", "x", "y");
        p.curves.push(Curve::new(vec![(0.0, 1.0), (1.0, 2.0)], "gray").thin(0.3));
        p.curves.push(Curve::new(vec![(0.0, 1.5), (1.0, 2.5)], "blue").dashed().labeled("q"));
        let svg = p.render().unwrap();
        assert_eq!(svg.matches("stroke-dasharray").count(), 1);
        assert_eq!(svg.matches("<polyline").count(), 2);
    }

    #[test]
    fn log_axis_drops_non_positive_values() {
        let mut p = Plot::new("t", "x", "y");
        p.log_y = true;
        p.curves.push(Curve::new(vec![(0.0, 0.0), (1.0, -1.0)], "red"));
        assert!(p.render().is_none());
        p.curves.push(Curve::new(vec![(0.0, 1e-3), (1.0, 1e-4)], "red"));
        assert!(p.render().is_some());
    }

    #[test]
    fn fixed_ticks_are_drawn() {
        let mut p = Plot::new("t", "level", "y");
        p.x_ticks = Some(vec![0.0, 1.0, 2.0]);
        p.curves.push(Curve::new(vec![(1.0, 1.0), (2.0, 0.5)], "red"));
        let svg = p.render().unwrap();
        for l in ["0", "1", "2"] {
            assert!(svg.contains(&format!(r#"text-anchor="middle">{l}</text>"#)));
        }
    }
}
