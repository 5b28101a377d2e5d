use alloc::vec;
use alloc::vec::Vec;
use nalgebra::Vector2;

use super::AssocError;
use crate::geometry::CameraId;

/// Axis-aligned detection rectangle `[u_tl, v_tl, u_br, v_br]` in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub u_tl: f64,
    pub v_tl: f64,
    pub u_br: f64,
    pub v_br: f64,
    pub frame: u32,
    pub person_id: u32,
    pub camera_id: CameraId,
}

impl BBox {
    pub fn new(
        corners: [f64; 4],
        frame: u32,
        person_id: u32,
        camera_id: CameraId,
    ) -> Result<Self, AssocError> {
        let b = Self {
            u_tl: corners[0],
            v_tl: corners[1],
            u_br: corners[2],
            v_br: corners[3],
            frame,
            person_id,
            camera_id,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<(), AssocError> {
        if !self.corners().iter().all(|v| v.is_finite()) {
            return Err(AssocError::InvalidBox("non-finite coordinate"));
        }
        if !(self.u_tl < self.u_br && self.v_tl < self.v_br) {
            return Err(AssocError::InvalidBox("corners are not ordered"));
        }
        Ok(())
    }

    pub fn corners(&self) -> [f64; 4] {
        [self.u_tl, self.v_tl, self.u_br, self.v_br]
    }

    pub fn width(&self) -> f64 {
        self.u_br - self.u_tl
    }

    pub fn height(&self) -> f64 {
        self.v_br - self.v_tl
    }

    /// Geometric center of the box, used as a proxy for the body mass.
    pub fn center(&self) -> Vector2<f64> {
        Vector2::new(0.5 * (self.u_tl + self.u_br), 0.5 * (self.v_tl + self.v_br))
    }
}

/// Time-ordered boxes of one person in one camera.
///
/// `embeddings` is either empty or holds one optional feature vector per
/// box.
#[derive(Debug, Clone, PartialEq)]
pub struct Tracklet {
    pub camera_id: CameraId,
    pub person_id: u32,
    pub boxes: Vec<BBox>,
    pub embeddings: Vec<Option<Vec<f64>>>,
}

impl Tracklet {
    pub fn new(camera_id: CameraId, person_id: u32, boxes: Vec<BBox>) -> Result<Self, AssocError> {
        let embeddings = vec![None; boxes.len()];
        let t = Self {
            camera_id,
            person_id,
            boxes,
            embeddings,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn with_embeddings(mut self, embeddings: Vec<Option<Vec<f64>>>) -> Result<Self, AssocError> {
        self.embeddings = embeddings;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), AssocError> {
        for b in &self.boxes {
            b.validate()?;
            if b.camera_id != self.camera_id || b.person_id != self.person_id {
                return Err(AssocError::InvalidTracklet("box belongs to another track"));
            }
        }
        if self.boxes.windows(2).any(|w| w[0].frame >= w[1].frame) {
            return Err(AssocError::InvalidTracklet("frames must be strictly increasing"));
        }
        if !self.embeddings.is_empty() && self.embeddings.len() != self.boxes.len() {
            return Err(AssocError::InvalidTracklet("one embedding slot per box expected"));
        }
        let mut dim = None;
        for e in self.embeddings.iter().flatten() {
            match dim {
                None => dim = Some(e.len()),
                Some(d) if d != e.len() => return Err(AssocError::DimensionMismatch(d, e.len())),
                _ => {}
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    pub fn embedding(&self, i: usize) -> Option<&[f64]> {
        self.embeddings.get(i).and_then(|e| e.as_deref())
    }

    /// Box at `frame`, if the person was detected then.
    pub fn at_frame(&self, frame: u32) -> Option<&BBox> {
        self.boxes
            .binary_search_by_key(&frame, |b| b.frame)
            .ok()
            .map(|i| &self.boxes[i])
    }
}
