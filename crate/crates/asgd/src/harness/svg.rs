//! Minimal self-contained SVG line plots: mean curves with ±1.96·SE bands,
//! optional log axes, and a legend. No plotting dependency; the output is a
//! plain string, deterministic for identical inputs.

/// One labeled curve; points are (x, mean, standard error).
#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64, f64)>,
}

#[derive(Debug, Clone)]
pub struct PlotConfig {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_x: bool,
    pub log_y: bool,
}

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 480.0;
const MARGIN_LEFT: f64 = 72.0;
const MARGIN_RIGHT: f64 = 160.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 56.0;

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

struct Axis {
    lo: f64,
    hi: f64,
    log: bool,
}

impl Axis {
    /// Maps a data value into [0, 1]; log axes drop nonpositive values
    /// before this is ever called.
    fn unit(&self, v: f64) -> f64 {
        let (v, lo, hi) = if self.log {
            (v.log10(), self.lo.log10(), self.hi.log10())
        } else {
            (v, self.lo, self.hi)
        };
        if hi == lo {
            0.5
        } else {
            (v - lo) / (hi - lo)
        }
    }

    /// Tick positions: powers of ten on log axes, five even steps otherwise.
    fn ticks(&self) -> Vec<f64> {
        if self.log {
            let lo = self.lo.log10().floor() as i32;
            let hi = self.hi.log10().ceil() as i32;
            (lo..=hi)
                .map(|e| 10f64.powi(e))
                .filter(|&v| v >= self.lo * 0.999 && v <= self.hi * 1.001)
                .collect()
        } else {
            (0..=4).map(|k| self.lo + (self.hi - self.lo) * k as f64 / 4.0).collect()
        }
    }
}

fn tick_text(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let mag = v.abs();
    if (1e-3..1e4).contains(&mag) {
        let s = format!("{v:.3}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        format!("{v:.1e}")
    }
}

/// Renders the series as one SVG document. Log-axis series silently skip
/// points at nonpositive coordinates; a plot with no drawable points still
/// renders its frame.
pub fn line_plot(config: &PlotConfig, series: &[Series]) -> String {
    let drawable = |&(x, y, _): &(f64, f64, f64)| {
        x.is_finite() && y.is_finite() && (!config.log_x || x > 0.0) && (!config.log_y || y > 0.0)
    };

    let mut x_lo = f64::INFINITY;
    let mut x_hi = f64::NEG_INFINITY;
    let mut y_lo = f64::INFINITY;
    let mut y_hi = f64::NEG_INFINITY;
    for s in series {
        for p in s.points.iter().filter(|p| drawable(p)) {
            let (x, y, se) = *p;
            x_lo = x_lo.min(x);
            x_hi = x_hi.max(x);
            let band = 1.96 * se.abs();
            let (b_lo, b_hi) = (y - band, y + band);
            y_lo = y_lo.min(if config.log_y && b_lo <= 0.0 { y } else { b_lo });
            y_hi = y_hi.max(b_hi);
        }
    }
    if !x_lo.is_finite() {
        // Nothing drawable; pick a harmless frame.
        x_lo = if config.log_x { 1.0 } else { 0.0 };
        x_hi = if config.log_x { 10.0 } else { 1.0 };
        y_lo = if config.log_y { 1.0 } else { 0.0 };
        y_hi = if config.log_y { 10.0 } else { 1.0 };
    }
    if x_lo == x_hi {
        let pad = if config.log_x { 2.0 } else { 1.0 };
        x_lo = if config.log_x { x_lo / pad } else { x_lo - pad };
        x_hi = if config.log_x { x_hi * pad } else { x_hi + pad };
    }
    if y_lo == y_hi {
        let pad = if config.log_y { 2.0 } else { y_lo.abs().max(1.0) * 0.1 };
        y_lo = if config.log_y { y_lo / pad } else { y_lo - pad };
        y_hi = if config.log_y { y_hi * pad } else { y_hi + pad };
    }

    let x_axis = Axis { lo: x_lo, hi: x_hi, log: config.log_x };
    let y_axis = Axis { lo: y_lo, hi: y_hi, log: config.log_y };
    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let px = |x: f64| MARGIN_LEFT + plot_w * x_axis.unit(x);
    let py = |y: f64| MARGIN_TOP + plot_h * (1.0 - y_axis.unit(y));

    let mut out = String::new();
    out.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\" font-size=\"12\">\n"
    ));
    out.push_str(&format!(
        "<rect x=\"0\" y=\"0\" width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>\n"
    ));
    out.push_str(&format!(
        "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\" font-size=\"15\">{}</text>\n",
        MARGIN_LEFT + plot_w / 2.0,
        MARGIN_TOP - 14.0,
        escape(&config.title)
    ));

    // Frame and grid.
    out.push_str(&format!(
        "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"none\" stroke=\"#333\"/>\n",
        MARGIN_LEFT, MARGIN_TOP, plot_w, plot_h
    ));
    for t in x_axis.ticks() {
        let x = px(t);
        out.push_str(&format!(
            "<line x1=\"{x:.2}\" y1=\"{:.2}\" x2=\"{x:.2}\" y2=\"{:.2}\" stroke=\"#ddd\"/>\n",
            MARGIN_TOP,
            MARGIN_TOP + plot_h
        ));
        out.push_str(&format!(
            "<text x=\"{x:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{}</text>\n",
            MARGIN_TOP + plot_h + 18.0,
            escape(&tick_text(t))
        ));
    }
    for t in y_axis.ticks() {
        let y = py(t);
        out.push_str(&format!(
            "<line x1=\"{:.2}\" y1=\"{y:.2}\" x2=\"{:.2}\" y2=\"{y:.2}\" stroke=\"#ddd\"/>\n",
            MARGIN_LEFT,
            MARGIN_LEFT + plot_w
        ));
        out.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\">{}</text>\n",
            MARGIN_LEFT - 6.0,
            y + 4.0,
            escape(&tick_text(t))
        ));
    }
    out.push_str(&format!(
        "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{}</text>\n",
        MARGIN_LEFT + plot_w / 2.0,
        HEIGHT - 12.0,
        escape(&config.x_label)
    ));
    out.push_str(&format!(
        "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\" transform=\"rotate(-90 {:.2} {:.2})\">{}</text>\n",
        16.0,
        MARGIN_TOP + plot_h / 2.0,
        16.0,
        MARGIN_TOP + plot_h / 2.0,
        escape(&config.y_label)
    ));

    for (si, s) in series.iter().enumerate() {
        let color = PALETTE[si % PALETTE.len()];
        let pts: Vec<(f64, f64, f64)> = s.points.iter().copied().filter(|p| drawable(p)).collect();
        if pts.is_empty() {
            continue;
        }
        // Confidence band, only where the whole band is drawable.
        let band: Vec<(f64, f64, f64)> = pts
            .iter()
            .copied()
            .filter(|&(_, y, se)| se > 0.0 && (!config.log_y || y - 1.96 * se > 0.0))
            .collect();
        if band.len() >= 2 {
            let mut d = String::from("M");
            for &(x, y, se) in &band {
                d.push_str(&format!(" {:.2},{:.2}", px(x), py(y + 1.96 * se)));
            }
            for &(x, y, se) in band.iter().rev() {
                d.push_str(&format!(" {:.2},{:.2}", px(x), py(y - 1.96 * se)));
            }
            d.push_str(" Z");
            out.push_str(&format!(
                "<path d=\"{d}\" fill=\"{color}\" fill-opacity=\"0.15\" stroke=\"none\"/>\n"
            ));
        }
        let coords: Vec<String> =
            pts.iter().map(|&(x, y, _)| format!("{:.2},{:.2}", px(x), py(y))).collect();
        out.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>\n",
            coords.join(" ")
        ));
        // Legend entry.
        let ly = MARGIN_TOP + 16.0 + 18.0 * si as f64;
        out.push_str(&format!(
            "<line x1=\"{:.2}\" y1=\"{ly:.2}\" x2=\"{:.2}\" y2=\"{ly:.2}\" stroke=\"{color}\" stroke-width=\"2\"/>\n",
            WIDTH - MARGIN_RIGHT + 10.0,
            WIDTH - MARGIN_RIGHT + 34.0
        ));
        out.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\">{}</text>\n",
            WIDTH - MARGIN_RIGHT + 40.0,
            ly + 4.0,
            escape(&s.label)
        ));
    }

    out.push_str("</svg>\n");
    out
}
