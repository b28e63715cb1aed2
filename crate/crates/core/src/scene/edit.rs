use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{BoundingBox3D, GaussianScene, SceneError};

/// Kind of local edit; decides which Gaussians are optimized and which of
/// their attributes may change.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EditTask {
    Insert,
    Replace,
    Retexture,
    Stylize,
}

impl std::str::FromStr for EditTask {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "insert" => Ok(Self::Insert),
            "replace" => Ok(Self::Replace),
            "retexture" => Ok(Self::Retexture),
            "stylize" => Ok(Self::Stylize),
            other => Err(format!("unknown task {other:?}")),
        }
    }
}

/// Per-attribute trainable flags.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trainable {
    pub position: bool,
    pub opacity: bool,
    pub scale: bool,
    pub rotation: bool,
    pub sh: bool,
}

impl Trainable {
    pub const ALL: Self = Self {
        position: true,
        opacity: true,
        scale: true,
        rotation: true,
        sh: true,
    };

    pub const SH_ONLY: Self = Self {
        position: false,
        opacity: false,
        scale: false,
        rotation: false,
        sh: true,
    };

    pub fn any(&self) -> bool {
        self.position || self.opacity || self.scale || self.rotation || self.sh
    }

    pub fn for_task(task: EditTask) -> Self {
        match task {
            EditTask::Retexture => Self::SH_ONLY,
            _ => Self::ALL,
        }
    }
}

/// The Gaussians an edit may touch, with their trainable attributes.
#[derive(Debug, Clone, PartialEq)]
pub struct EditSet {
    editable: Vec<usize>,
    trainable: Trainable,
    task: EditTask,
    scene_len: usize,
}

impl EditSet {
    /// Sorted, unique editable indices.
    pub fn editable_indices(&self) -> &[usize] {
        &self.editable
    }

    pub fn trainable(&self) -> Trainable {
        self.trainable
    }

    pub fn task(&self) -> EditTask {
        self.task
    }

    pub fn is_editable(&self, index: usize) -> bool {
        self.editable.binary_search(&index).is_ok()
    }

    /// Complement of the editable set within the scene this set was built for.
    pub fn fixed_indices(&self) -> Vec<usize> {
        (0..self.scene_len)
            .filter(|i| !self.is_editable(*i))
            .collect()
    }

    pub fn scene_len(&self) -> usize {
        self.scene_len
    }

    pub(crate) fn from_parts(editable: Vec<usize>, trainable: Trainable, task: EditTask, scene_len: usize) -> Self {
        debug_assert!(editable.windows(2).all(|w| w[0] < w[1]));
        Self {
            editable,
            trainable,
            task,
            scene_len,
        }
    }

    /// Restricts the trainable flags, e.g. when the caller freezes a group.
    pub fn with_trainable(mut self, trainable: Trainable) -> Self {
        self.trainable = trainable;
        self
    }
}

/// Indices of Gaussians whose centers lie inside `bbox` (boundary inclusive).
pub fn select_in_box(scene: &GaussianScene, bbox: &BoundingBox3D) -> Vec<usize> {
    scene
        .gaussians()
        .iter()
        .enumerate()
        .filter(|(_, g)| bbox.contains(&g.position))
        .map(|(i, _)| i)
        .collect()
}

/// Derives the editable subset for `task`.
///
/// For [`EditTask::Insert`] the in-box Gaussians are duplicated and appended;
/// only the copies are editable, so the returned scene is larger than the
/// input.
pub fn build_edit_set(
    scene: &GaussianScene,
    bbox: &BoundingBox3D,
    task: EditTask,
) -> Result<(GaussianScene, EditSet), SceneError> {
    let selected = select_in_box(scene, bbox);
    if selected.is_empty() && task != EditTask::Stylize {
        return Err(SceneError::EmptyRegion);
    }
    let mut out = scene.clone();
    let editable = match task {
        EditTask::Insert => {
            let mut copies = Vec::with_capacity(selected.len());
            for &i in &selected {
                let g = scene.gaussians()[i].clone();
                copies.push(out.push(g)?);
            }
            copies
        }
        EditTask::Replace | EditTask::Retexture => selected,
        EditTask::Stylize => (0..scene.len()).collect(),
    };
    let set = EditSet {
        editable,
        trainable: Trainable::for_task(task),
        task,
        scene_len: out.len(),
    };
    Ok((out, set))
}

/// Moves each editable Gaussian by a uniform offset of up to
/// `fraction * half_extent` per box axis, clamped to stay inside the box.
pub fn jitter_inserted<R: Rng>(
    scene: &mut GaussianScene,
    set: &EditSet,
    bbox: &BoundingBox3D,
    fraction: f64,
    rng: &mut R,
) {
    let h = bbox.half_extents();
    for &i in set.editable_indices() {
        let g = &mut scene.gaussians_mut()[i];
        let mut local = bbox.to_local(&g.position);
        for axis in 0..3 {
            let amp = fraction * h[axis];
            if amp > 0.0 {
                local[axis] = (local[axis] + rng.gen_range(-amp..=amp)).clamp(-h[axis], h[axis]);
            }
        }
        g.position = bbox.center() + bbox.orientation() * local;
    }
}
