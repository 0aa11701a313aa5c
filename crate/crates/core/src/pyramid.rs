/// Resolution level of a feature map relative to the low-resolution input:
/// `X4` is full HR resolution, `X1` is HR/4.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Scale {
    X1,
    X2,
    X4,
}

impl Scale {
    /// Coarse to fine, the fixed merge order.
    pub const ALL: [Scale; 3] = [Scale::X1, Scale::X2, Scale::X4];

    pub fn factor(self) -> usize {
        match self {
            Scale::X1 => 1,
            Scale::X2 => 2,
            Scale::X4 => 4,
        }
    }

    /// Downsampling of this level relative to HR (`4 / factor`).
    pub fn stride_from_hr(self) -> usize {
        4 / self.factor()
    }

    pub fn label(self) -> &'static str {
        match self {
            Scale::X1 => "1x",
            Scale::X2 => "2x",
            Scale::X4 => "4x",
        }
    }
}

/// One value per scale.
#[derive(Clone, Debug, PartialEq)]
pub struct Pyramid<T> {
    pub x4: T,
    pub x2: T,
    pub x1: T,
}

impl<T> Pyramid<T> {
    pub fn from_fn(mut f: impl FnMut(Scale) -> T) -> Self {
        Self { x1: f(Scale::X1), x2: f(Scale::X2), x4: f(Scale::X4) }
    }

    pub fn try_from_fn<E>(mut f: impl FnMut(Scale) -> Result<T, E>) -> Result<Self, E> {
        Ok(Self { x1: f(Scale::X1)?, x2: f(Scale::X2)?, x4: f(Scale::X4)? })
    }

    pub fn get(&self, s: Scale) -> &T {
        match s {
            Scale::X1 => &self.x1,
            Scale::X2 => &self.x2,
            Scale::X4 => &self.x4,
        }
    }

    pub fn get_mut(&mut self, s: Scale) -> &mut T {
        match s {
            Scale::X1 => &mut self.x1,
            Scale::X2 => &mut self.x2,
            Scale::X4 => &mut self.x4,
        }
    }

    pub fn map<U>(&self, mut f: impl FnMut(Scale, &T) -> U) -> Pyramid<U> {
        Pyramid::from_fn(|s| f(s, self.get(s)))
    }
}
