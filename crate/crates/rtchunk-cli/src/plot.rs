use crate::sweep::SweepResult;
use anyhow::Result;
use rtchunk_core::executor::Strategy;
use std::path::Path;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 440.0;
const MARGIN_L: f64 = 64.0;
const MARGIN_R: f64 = 24.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 56.0;

fn color(strategy: Strategy) -> &'static str {
    match strategy {
        Strategy::Synchronous => "#7f7f7f",
        Strategy::NaiveAsync => "#d62728",
        Strategy::InferenceTimeRtc => "#1f77b4",
        Strategy::TrainingTimeRtc => "#2ca02c",
    }
}

/// Self-contained SVG line chart of solve rate vs delay with shaded
/// Wilson bands, built purely from CSV-level data so `plot` can
/// regenerate it from a sweep file alone.
pub fn render_svg(result: &SweepResult, title: &str) -> String {
    let mut delays: Vec<usize> = result.cells.iter().map(|c| c.delay).collect();
    delays.sort_unstable();
    delays.dedup();
    let d_min = *delays.first().unwrap_or(&0) as f64;
    let d_max = *delays.last().unwrap_or(&1) as f64;
    let span = (d_max - d_min).max(1.0);

    let x = |d: f64| MARGIN_L + (d - d_min) / span * (WIDTH - MARGIN_L - MARGIN_R);
    let y = |rate: f64| MARGIN_T + (1.0 - rate) * (HEIGHT - MARGIN_T - MARGIN_B);

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" \
viewBox=\"0 0 {w} {h}\" font-family=\"sans-serif\">\n",
        w = WIDTH,
        h = HEIGHT
    ));
    svg.push_str(&format!(
        "<rect width=\"{}\" height=\"{}\" fill=\"white\"/>\n",
        WIDTH, HEIGHT
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">{}</text>\n",
        WIDTH / 2.0,
        title
    ));

    // Grid and axes.
    for i in 0..=5 {
        let rate = i as f64 / 5.0;
        let yy = y(rate);
        svg.push_str(&format!(
            "<line x1=\"{}\" y1=\"{yy}\" x2=\"{}\" y2=\"{yy}\" stroke=\"#dddddd\"/>\n",
            MARGIN_L,
            WIDTH - MARGIN_R
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\" font-size=\"12\">{:.1}</text>\n",
            MARGIN_L - 8.0,
            yy + 4.0,
            rate
        ));
    }
    for &d in &delays {
        let xx = x(d as f64);
        svg.push_str(&format!(
            "<line x1=\"{xx}\" y1=\"{}\" x2=\"{xx}\" y2=\"{}\" stroke=\"#eeeeee\"/>\n",
            MARGIN_T,
            HEIGHT - MARGIN_B
        ));
        svg.push_str(&format!(
            "<text x=\"{xx}\" y=\"{}\" text-anchor=\"middle\" font-size=\"12\">{}</text>\n",
            HEIGHT - MARGIN_B + 20.0,
            d
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"13\">inference delay d (ticks)</text>\n",
        (MARGIN_L + WIDTH - MARGIN_R) / 2.0,
        HEIGHT - 12.0
    ));
    svg.push_str(&format!(
        "<text x=\"16\" y=\"{}\" text-anchor=\"middle\" font-size=\"13\" \
transform=\"rotate(-90 16 {y})\">solve rate</text>\n",
        (MARGIN_T + HEIGHT - MARGIN_B) / 2.0,
        y = (MARGIN_T + HEIGHT - MARGIN_B) / 2.0
    ));
    svg.push_str(&format!(
        "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#333333\"/>\n",
        MARGIN_L,
        MARGIN_T,
        WIDTH - MARGIN_L - MARGIN_R,
        HEIGHT - MARGIN_T - MARGIN_B
    ));

    // One band + line per strategy, in a fixed order.
    let mut strategies: Vec<Strategy> = Vec::new();
    for s in Strategy::all() {
        if result.cells.iter().any(|c| c.strategy == s) {
            strategies.push(s);
        }
    }
    for &strategy in &strategies {
        let mut cells: Vec<_> =
            result.cells.iter().filter(|c| c.strategy == strategy).collect();
        cells.sort_by_key(|c| c.delay);
        if cells.is_empty() {
            continue;
        }
        let mut band = String::from("<polygon points=\"");
        for c in &cells {
            band.push_str(&format!("{:.2},{:.2} ", x(c.delay as f64), y(c.wilson_hi)));
        }
        for c in cells.iter().rev() {
            band.push_str(&format!("{:.2},{:.2} ", x(c.delay as f64), y(c.wilson_lo)));
        }
        band.push_str(&format!(
            "\" fill=\"{}\" fill-opacity=\"0.15\" stroke=\"none\"/>\n",
            color(strategy)
        ));
        svg.push_str(&band);

        let mut line = String::from("<polyline points=\"");
        for c in &cells {
            line.push_str(&format!("{:.2},{:.2} ", x(c.delay as f64), y(c.rate)));
        }
        line.push_str(&format!(
            "\" fill=\"none\" stroke=\"{}\" stroke-width=\"2\"/>\n",
            color(strategy)
        ));
        svg.push_str(&line);
        for c in &cells {
            svg.push_str(&format!(
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"{}\"/>\n",
                x(c.delay as f64),
                y(c.rate),
                color(strategy)
            ));
        }
    }

    // Legend.
    let mut ly = MARGIN_T + 10.0;
    for &strategy in &strategies {
        let lx = MARGIN_L + 12.0;
        svg.push_str(&format!(
            "<line x1=\"{lx}\" y1=\"{ly}\" x2=\"{}\" y2=\"{ly}\" stroke=\"{}\" stroke-width=\"2\"/>\n",
            lx + 22.0,
            color(strategy)
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"12\">{}</text>\n",
            lx + 28.0,
            ly + 4.0,
            strategy.label()
        ));
        ly += 18.0;
    }

    svg.push_str("</svg>\n");
    svg
}

pub fn write_svg(result: &SweepResult, title: &str, path: &Path) -> Result<()> {
    std::fs::write(path, render_svg(result, title))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::csvio::{parse_csv, to_csv};
    use crate::sweep::CellResult;

    #[test]
    fn svg_is_a_pure_function_of_the_csv() {
        let result = SweepResult {
            cells: vec![
                CellResult {
                    strategy: Strategy::NaiveAsync,
                    delay: 0,
                    exec_horizon: 1,
                    n: 8,
                    successes: 6,
                    rate: 0.75,
                    wilson_lo: 0.4,
                    wilson_hi: 0.93,
                    mean_ticks: 60.0,
                    sem_ticks: 2.0,
                    mean_switch_jump: 0.1,
                    mean_within_jump: 0.05,
                    fwd_passes: 10.0,
                    vjp_passes: 0.0,
                    seed_base: 1,
                },
                CellResult {
                    strategy: Strategy::NaiveAsync,
                    delay: 4,
                    exec_horizon: 4,
                    n: 8,
                    successes: 2,
                    rate: 0.25,
                    wilson_lo: 0.07,
                    wilson_hi: 0.59,
                    mean_ticks: 90.0,
                    sem_ticks: 4.0,
                    mean_switch_jump: 0.4,
                    mean_within_jump: 0.05,
                    fwd_passes: 10.0,
                    vjp_passes: 0.0,
                    seed_base: 1,
                },
            ],
        };
        let direct = render_svg(&result, "t");
        let roundtrip = render_svg(&parse_csv(&to_csv(&result)).unwrap(), "t");
        assert_eq!(direct, roundtrip);
        assert!(direct.starts_with("<svg"));
        assert!(direct.contains("naive_async"));
    }
}
