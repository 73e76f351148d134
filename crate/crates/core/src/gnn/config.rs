use crate::error::{Error, Result};

/// Architecture and optimisation settings of the GNN.
#[derive(Debug, Clone, PartialEq)]
pub struct GnnConfig {
    /// Node embedding size `s`.
    pub embedding: usize,
    /// Message size `u`.
    pub message: usize,
    /// Number of message passing layers `K`.
    pub layers: usize,
    /// Hidden width of the two-layer message nets.
    pub message_hidden: usize,
    /// Hidden width of the two-layer prediction head.
    pub head_hidden: usize,
    /// Width of the node input features.
    pub input_width: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
}

impl Default for GnnConfig {
    fn default() -> Self {
        GnnConfig {
            embedding: 64,
            message: 64,
            layers: 4,
            message_hidden: 64,
            head_hidden: 64,
            input_width: 12,
            learning_rate: 4e-4,
            batch_size: 32,
            epochs: 100,
        }
    }
}

impl GnnConfig {
    /// Square tiny model with every width equal to `width`.
    pub fn tiny(width: usize, layers: usize, input_width: usize) -> Self {
        GnnConfig {
            embedding: width,
            message: width,
            layers,
            message_hidden: width,
            head_hidden: width,
            input_width,
            ..GnnConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let widths = [
            ("embedding", self.embedding),
            ("message", self.message),
            ("layers", self.layers),
            ("message_hidden", self.message_hidden),
            ("head_hidden", self.head_hidden),
            ("input_width", self.input_width),
            ("batch_size", self.batch_size),
        ];
        for (name, v) in widths {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be >= 1")));
            }
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        Ok(())
    }

    /// Closed-form parameter count:
    /// `2(d·s + s)` for the encoders, per layer `3(2s·h + h + h·u + u)` for
    /// the message nets, `4s` for the two attention vectors and `2(u·s + s)`
    /// for the updates, and `s·q + 2q + 1` for the head, with `d` the input
    /// width, `h` the message hidden width and `q` the head hidden width.
    /// The default configuration has 189 185 parameters.
    pub fn parameter_count(&self) -> usize {
        let (d, s, u, h, q) = (
            self.input_width,
            self.embedding,
            self.message,
            self.message_hidden,
            self.head_hidden,
        );
        let encoders = 2 * (d * s + s);
        let layer = 3 * (2 * s * h + h + h * u + u) + 4 * s + 2 * (u * s + s);
        let head = s * q + 2 * q + 1;
        encoders + self.layers * layer + head
    }
}
