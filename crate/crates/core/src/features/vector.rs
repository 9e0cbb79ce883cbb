//! Per-pair vector features.

use crate::error::{Error, Result};
use crate::geom::{Point, Rect};
use crate::ingest::{DriverElectrical, PinElectrical};
use crate::layout::{Fragment, SplitLayout};

/// Signed and unsigned distances along the split layer's preferred axis,
/// its non-preferred axis and their sum (microns), followed by the same six
/// values as ratios of the die extent along each axis and of the die
/// half-perimeter.
///
/// Offsets are `q - p`: source pin minus sink pin.
pub fn vpp_distances(p: Point, q: Point, layout: &SplitLayout) -> Result<[f64; 12]> {
    distances(p, q, &layout.die_area, layout.split_direction(), layout.tech.dbu_per_micron)
}

pub(crate) fn distances(
    p: Point,
    q: Point,
    die: &Rect,
    pref: crate::geom::Direction,
    dbu: u32,
) -> Result<[f64; 12]> {
    if die.width() <= 0 || die.height() <= 0 {
        return Err(Error::Invalid("die area has zero extent".into()));
    }
    let um = |v: i64| v as f64 / dbu as f64;
    let d_pref = um(q.along(pref) - p.along(pref));
    let d_non = um(q.along(pref.other()) - p.along(pref.other()));
    let ext = |dir| match dir {
        crate::geom::Direction::Horizontal => um(die.width()),
        crate::geom::Direction::Vertical => um(die.height()),
    };
    let (e_pref, e_non) = (ext(pref), ext(pref.other()));
    let half_perimeter = e_pref + e_non;
    let signed = [d_pref, d_non, d_pref + d_non];
    let unsigned = [d_pref.abs(), d_non.abs(), d_pref.abs() + d_non.abs()];
    Ok([
        signed[0],
        signed[1],
        signed[2],
        unsigned[0],
        unsigned[1],
        unsigned[2],
        signed[0] / e_pref,
        signed[1] / e_non,
        signed[2] / half_perimeter,
        unsigned[0] / e_pref,
        unsigned[1] / e_non,
        unsigned[2] / half_perimeter,
    ])
}

/// Wirelength, via and capacitance totals of one fragment's FEOL geometry.
#[derive(Clone, Debug, PartialEq)]
pub struct FragmentStats {
    /// Microns per metal layer `1..=m`.
    pub wirelength_um: Vec<f64>,
    /// Via count per cut layer `1..m`.
    pub vias: Vec<u32>,
    pub wire_cap_f: f64,
    pub via_cap_f: f64,
    /// Sum of sink pin capacitances held by the fragment.
    pub sink_cap_f: f64,
    pub driver: Option<DriverElectrical>,
}

impl FragmentStats {
    pub fn new(frag: &Fragment, layout: &SplitLayout, pins: &[PinElectrical]) -> Self {
        let m = layout.split_layer as usize;
        let tech = &layout.tech;
        let mut wirelength_um = vec![0.0; m];
        for &w in &frag.wires {
            let seg = &layout.wires[w as usize];
            wirelength_um[seg.layer as usize - 1] += tech.dbu_to_um(seg.length());
        }
        let mut vias = vec![0u32; m.saturating_sub(1)];
        for &v in &frag.vias {
            vias[layout.vias[v as usize].cut as usize - 1] += 1;
        }
        let wire_cap_f = wirelength_um
            .iter()
            .enumerate()
            .map(|(l, len)| len * tech.layers[l].unit_cap_f_per_um)
            .sum();
        let via_cap_f = vias
            .iter()
            .enumerate()
            .map(|(c, &n)| n as f64 * tech.cuts[c].cap_f)
            .sum();
        FragmentStats {
            wirelength_um,
            vias,
            wire_cap_f,
            via_cap_f,
            sink_cap_f: frag.sinks.iter().map(|&s| pins[s as usize].cap_f).sum(),
            driver: frag.driver.and_then(|d| pins[d as usize].driver),
        }
    }

    pub fn total_wirelength_um(&self) -> f64 {
        self.wirelength_um.iter().sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CapBounds {
    pub upper_f: f64,
    pub lower_f: f64,
    pub sink_count: u32,
}

/// Upper bound: the driver's maximum load. Lower bound: sink pin loads of the
/// sink fragment plus wire and via loads of both fragments.
pub fn load_cap_bounds(sink: &FragmentStats, sink_count: u32, source: &FragmentStats) -> Result<CapBounds> {
    let driver = source
        .driver
        .ok_or_else(|| Error::Invalid("source fragment has no resolved driver".into()))?;
    Ok(CapBounds {
        upper_f: driver.max_cap_f,
        lower_f: sink.sink_cap_f + sink.wire_cap_f + source.wire_cap_f + sink.via_cap_f + source.via_cap_f,
        sink_count,
    })
}

/// Per-layer wirelengths of the sink then the source fragment, followed by
/// per-cut via counts of the sink then the source fragment.
pub fn layer_wirelengths_vias(sink: &FragmentStats, source: &FragmentStats) -> Vec<f64> {
    sink.wirelength_um
        .iter()
        .chain(&source.wirelength_um)
        .copied()
        .chain(sink.vias.iter().chain(&source.vias).map(|&n| n as f64))
        .collect()
}

/// Linear lower bound on the driver delay in seconds.
pub fn driver_delay_lb(driver: &DriverElectrical, lower_load_f: f64) -> f64 {
    driver.intrinsic_delay_s + driver.drive_res_ohm * lower_load_f
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Direction;

    fn die() -> Rect {
        Rect::new(Point::new(0, 0), Point::new(100_000, 50_000))
    }

    #[test]
    fn coincident_pins_give_zero() {
        let d = distances(Point::new(5, 5), Point::new(5, 5), &die(), Direction::Horizontal, 1000).unwrap();
        assert!(d.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn hand_computed_offsets() {
        let d = distances(
            Point::new(10_000, 20_000),
            Point::new(13_000, 16_000),
            &die(),
            Direction::Horizontal,
            1000,
        )
        .unwrap();
        let want = [
            3.0,
            -4.0,
            -1.0,
            3.0,
            4.0,
            7.0,
            0.03,
            -0.08,
            -1.0 / 150.0,
            0.03,
            0.08,
            7.0 / 150.0,
        ];
        for (a, b) in d.iter().zip(want) {
            assert!((a - b).abs() < 1e-15, "{d:?}");
        }
    }

    #[test]
    fn vertical_preference_swaps_axes() {
        let d = distances(Point::new(0, 0), Point::new(3000, -4000), &die(), Direction::Vertical, 1000).unwrap();
        assert_eq!(&d[..3], &[-4.0, 3.0, -1.0]);
        assert_eq!(d[6], -4.0 / 50.0);
    }

    #[test]
    fn zero_area_die_is_rejected() {
        let flat = Rect::new(Point::new(0, 0), Point::new(10, 0));
        assert!(distances(Point::new(0, 0), Point::new(1, 0), &flat, Direction::Horizontal, 1000).is_err());
    }

    #[test]
    fn delay_is_linear_in_load() {
        let drv = DriverElectrical {
            max_cap_f: 1e-13,
            drive_res_ohm: 1000.0,
            intrinsic_delay_s: 10e-12,
        };
        assert_eq!(driver_delay_lb(&drv, 0.0), 10e-12);
        assert!((driver_delay_lb(&drv, 2e-15) - 12e-12).abs() < 1e-24);
        assert!(driver_delay_lb(&drv, 3e-15) > driver_delay_lb(&drv, 2e-15));
    }
}
