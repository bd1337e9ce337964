//! The event type and the per-pixel surface of last-event timestamps.

/// One asynchronous brightness-change measurement.
///
/// `polarity` is `+1` for an ON event (log intensity increased past the
/// threshold) and `-1` for OFF.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub x: u16,
    pub y: u16,
    /// Seconds.
    pub t: f64,
    pub polarity: i8,
}

impl Event {
    pub fn new(x: u16, y: u16, t: f64, polarity: i8) -> Self {
        debug_assert!(polarity == 1 || polarity == -1);
        Event { x, y, t, polarity }
    }
}

/// Per-pixel record of the last event: its timestamp and the log intensity
/// the pixel was referenced to when it fired. Supplies the time delta for
/// contrast prediction. One instance lives in the simulator and one in the
/// tracker (the tracker leaves the intensity slot unused).
#[derive(Debug, Clone)]
pub struct TimestampMap {
    width: usize,
    height: usize,
    last_t: Vec<f64>,
    ref_log_intensity: Vec<f64>,
}

impl TimestampMap {
    pub fn new(width: usize, height: usize) -> Self {
        TimestampMap {
            width,
            height,
            last_t: vec![f64::NAN; width * height],
            ref_log_intensity: vec![f64::NAN; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    fn idx(&self, x: u16, y: u16) -> usize {
        debug_assert!((x as usize) < self.width && (y as usize) < self.height);
        y as usize * self.width + x as usize
    }

    /// Timestamp of the last event at the pixel, if any.
    #[inline]
    pub fn last_time(&self, x: u16, y: u16) -> Option<f64> {
        let t = self.last_t[self.idx(x, y)];
        if t.is_nan() {
            None
        } else {
            Some(t)
        }
    }

    pub fn ref_log_intensity(&self, x: u16, y: u16) -> Option<f64> {
        let v = self.ref_log_intensity[self.idx(x, y)];
        if v.is_nan() {
            None
        } else {
            Some(v)
        }
    }

    /// Record an event. Timestamps must be non-decreasing per pixel.
    pub fn record(&mut self, x: u16, y: u16, t: f64, ref_log_intensity: f64) {
        let i = self.idx(x, y);
        debug_assert!(self.last_t[i].is_nan() || t >= self.last_t[i]);
        self.last_t[i] = t;
        self.ref_log_intensity[i] = ref_log_intensity;
    }
}
