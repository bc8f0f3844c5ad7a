//! SVG figures for a run report.

use std::path::Path;

use plotters::prelude::*;

use super::report::RunReport;

type PlotResult = Result<(), Box<dyn std::error::Error>>;

fn y_range(values: impl Iterator<Item = f64>) -> std::ops::Range<f64> {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return 0.0..1.0;
    }
    let pad = ((hi - lo) * 0.05).max(1.0);
    (lo - pad).min(0.0)..hi + pad
}

/// Daily redemption with the currency model's upper control band.
pub fn plot_redemption(report: &RunReport, path: &Path) -> PlotResult {
    let n = report.days.len() as i32;
    let values: Vec<f64> = report.days.iter().map(|d| d.redemption.as_f64()).collect();
    let band: Vec<(i32, f64)> = report
        .currency
        .iter()
        .flat_map(|c| c.days.iter().enumerate())
        .filter_map(|(i, d)| Some((i as i32, d.threshold(report.currency_k)?)))
        .collect();
    let root = SVGBackend::new(path, (960, 480)).into_drawing_area();
    root.fill(&WHITE)?;
    let mut chart = ChartBuilder::on(&root)
        .caption("Daily redemption", ("sans-serif", 20))
        .margin(10)
        .x_label_area_size(30)
        .y_label_area_size(80)
        .build_cartesian_2d(
            0..n.max(1),
            y_range(values.iter().copied().chain(band.iter().map(|b| b.1))),
        )?;
    chart.configure_mesh().x_desc("day").y_desc("minor units").draw()?;
    chart
        .draw_series(LineSeries::new(
            values.iter().enumerate().map(|(i, v)| (i as i32, *v)),
            &BLUE,
        ))?
        .label("redemption")
        .legend(|(x, y)| PathElement::new([(x, y), (x + 15, y)], BLUE));
    chart
        .draw_series(LineSeries::new(band, &RED))?
        .label("mean + k·std")
        .legend(|(x, y)| PathElement::new([(x, y), (x + 15, y)], RED));
    let flags = report.days.iter().enumerate().filter(|(_, d)| d.currency_flag);
    chart.draw_series(flags.map(|(i, d)| Circle::new((i as i32, d.redemption.as_f64()), 4, RED.filled())))?;
    chart.configure_series_labels().border_style(BLACK).draw()?;
    root.present()?;
    Ok(())
}

/// Purses locked at the end of each day.
pub fn plot_locked(report: &RunReport, path: &Path) -> PlotResult {
    let n = report.days.len() as i32;
    let locked: Vec<f64> = report.days.iter().map(|d| d.locked as f64).collect();
    let root = SVGBackend::new(path, (960, 480)).into_drawing_area();
    root.fill(&WHITE)?;
    let mut chart = ChartBuilder::on(&root)
        .caption("Locked purses", ("sans-serif", 20))
        .margin(10)
        .x_label_area_size(30)
        .y_label_area_size(60)
        .build_cartesian_2d(0..n.max(1), y_range(locked.iter().copied()))?;
    chart.configure_mesh().x_desc("day").y_desc("purses").draw()?;
    chart.draw_series(LineSeries::new(
        locked.iter().enumerate().map(|(i, v)| (i as i32, *v)),
        &BLUE,
    ))?;
    root.present()?;
    Ok(())
}

/// Flagged merchants per day against the system bound.
pub fn plot_red_stars(report: &RunReport, path: &Path) -> PlotResult {
    let Some(m) = &report.merchant else { return Ok(()) };
    let start = report.header.start_date;
    let x = |d: chrono::NaiveDate| (d - start).num_days() as i32;
    let n = report.days.len() as i32;
    let root = SVGBackend::new(path, (960, 480)).into_drawing_area();
    root.fill(&WHITE)?;
    let ys = m
        .system
        .iter()
        .map(|d| d.flagged as f64)
        .chain(m.system.iter().filter_map(|d| d.bound));
    let mut chart = ChartBuilder::on(&root)
        .caption("Merchants out of norm", ("sans-serif", 20))
        .margin(10)
        .x_label_area_size(30)
        .y_label_area_size(60)
        .build_cartesian_2d(0..n.max(1), y_range(ys))?;
    chart
        .configure_mesh()
        .x_desc("day")
        .y_desc("flagged merchants")
        .draw()?;
    chart
        .draw_series(LineSeries::new(
            m.system.iter().map(|d| (x(d.date), d.flagged as f64)),
            &BLUE,
        ))?
        .label("flagged")
        .legend(|(x, y)| PathElement::new([(x, y), (x + 15, y)], BLUE));
    chart
        .draw_series(LineSeries::new(
            m.system.iter().filter_map(|d| Some((x(d.date), d.bound?))),
            &RED,
        ))?
        .label("bound")
        .legend(|(x, y)| PathElement::new([(x, y), (x + 15, y)], RED));
    let alarms = m.system.iter().filter(|d| d.alarm);
    chart.draw_series(alarms.map(|d| Circle::new((x(d.date), d.flagged as f64), 4, RED.filled())))?;
    chart.configure_series_labels().border_style(BLACK).draw()?;
    root.present()?;
    Ok(())
}

pub fn write_plots(report: &RunReport, dir: &Path) -> PlotResult {
    std::fs::create_dir_all(dir)?;
    plot_redemption(report, &dir.join("redemption.svg"))?;
    plot_locked(report, &dir.join("locked.svg"))?;
    plot_red_stars(report, &dir.join("red_stars.svg"))
}
