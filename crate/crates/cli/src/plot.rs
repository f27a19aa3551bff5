use std::path::Path;

use anyhow::{Context, Result};
use plotters::prelude::*;
use serde_json::Value;

use dclnet_core::trainer::EpochLog;

fn draw_err<E: std::error::Error + Send + Sync + 'static>(e: DrawingAreaErrorKind<E>) -> anyhow::Error {
    anyhow::anyhow!("drawing failed: {e}")
}

/// Loss components on the left, validation Dice on the right.
pub fn loss_curves(log: &[EpochLog], path: &Path) -> Result<()> {
    anyhow::ensure!(!log.is_empty(), "training log is empty");
    let root = SVGBackend::new(path, (960, 420)).into_drawing_area();
    root.fill(&WHITE).map_err(draw_err)?;
    let (left, right) = root.split_horizontally(520);
    let last = log.last().map_or(1, |e| e.epoch).max(1) as f64;

    let series: [(&str, RGBColor, fn(&EpochLog) -> f64); 4] = [
        ("total", BLACK, |e| e.total),
        ("dice", BLUE, |e| e.dice_loss),
        ("bce", RED, |e| e.bce_loss),
        ("coarse", GREEN, |e| e.coarse_loss),
    ];
    let top = log.iter().map(|e| e.total.max(e.dice_loss)).fold(0.0, f64::max).max(1e-3) * 1.05;
    let mut chart = ChartBuilder::on(&left)
        .caption("training loss", ("sans-serif", 18))
        .margin(12)
        .x_label_area_size(32)
        .y_label_area_size(48)
        .build_cartesian_2d(0.0..last, 0.0..top)
        .map_err(draw_err)?;
    chart.configure_mesh().x_desc("epoch").draw().map_err(draw_err)?;
    for (name, color, f) in series {
        chart
            .draw_series(LineSeries::new(log.iter().map(|e| (e.epoch as f64, f(e))), color.stroke_width(2)))
            .map_err(draw_err)?
            .label(name)
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color.stroke_width(2)));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.85))
        .border_style(BLACK)
        .draw()
        .map_err(draw_err)?;

    let mut val = ChartBuilder::on(&right)
        .caption("validation mean Dice", ("sans-serif", 18))
        .margin(12)
        .x_label_area_size(32)
        .y_label_area_size(40)
        .build_cartesian_2d(0.0..last, 0.0..1.0)
        .map_err(draw_err)?;
    val.configure_mesh().x_desc("epoch").draw().map_err(draw_err)?;
    let pts: Vec<(f64, f64)> = log.iter().filter_map(|e| e.val_dice.map(|d| (e.epoch as f64, d))).collect();
    val.draw_series(LineSeries::new(pts.clone(), BLUE.stroke_width(2))).map_err(draw_err)?;
    val.draw_series(pts.into_iter().map(|p| Circle::new(p, 3, BLUE.filled())))
        .map_err(draw_err)?;
    root.present().map_err(draw_err)?;
    Ok(())
}

/// Grouped Dice/Jaccard/Precision bars per class of a `metrics.json`.
pub fn class_bars(report: &Value, path: &Path) -> Result<()> {
    let classes = report
        .get("classes")
        .and_then(Value::as_object)
        .context("metrics file has no `classes` object")?;
    let names: Vec<&String> = classes.keys().collect();
    anyhow::ensure!(!names.is_empty(), "metrics file lists no classes");
    let keys = [("dice", BLUE), ("jaccard", GREEN), ("precision", RED)];

    let root = SVGBackend::new(path, (160 + 140 * names.len() as u32, 420)).into_drawing_area();
    root.fill(&WHITE).map_err(draw_err)?;
    let n = names.len() as f64;
    let mut chart = ChartBuilder::on(&root)
        .caption("per-class overlap", ("sans-serif", 18))
        .margin(12)
        .x_label_area_size(32)
        .y_label_area_size(40)
        .build_cartesian_2d(-0.5..n - 0.5, 0.0..1.0)
        .map_err(draw_err)?;
    chart
        .configure_mesh()
        .disable_x_mesh()
        .x_labels(names.len())
        .x_label_formatter(&|x| {
            let i = x.round();
            if (x - i).abs() < 1e-6 && i >= 0.0 {
                names.get(i as usize).map_or(String::new(), |s| s.to_string())
            } else {
                String::new()
            }
        })
        .draw()
        .map_err(draw_err)?;
    let bar = 0.8 / keys.len() as f64;
    for (k, (key, color)) in keys.into_iter().enumerate() {
        let rects = names.iter().enumerate().filter_map(|(i, name)| {
            let v = classes[*name].get(key)?.as_f64()?;
            let x0 = i as f64 - 0.4 + k as f64 * bar;
            Some(Rectangle::new([(x0, 0.0), (x0 + bar * 0.9, v)], color.filled()))
        });
        chart
            .draw_series(rects)
            .map_err(draw_err)?
            .label(key)
            .legend(move |(x, y)| Rectangle::new([(x, y - 5), (x + 12, y + 5)], color.filled()));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.85))
        .border_style(BLACK)
        .draw()
        .map_err(draw_err)?;
    root.present().map_err(draw_err)?;
    Ok(())
}
