//! Kinematic chain table, forward kinematics and center-of-mass computation.
//!
//! The chain is described by a plain data file, one `link` line per link
//! (see [`LinkTable::parse`]). All positions are millimeters in the torso
//! frame: +x forward, +y left, +z up. Masses are grams.
//!
//! Both leg chains consume the single `HipYawPitch` angle through their own
//! (mirrored) rotation axes; there is no per-leg copy of that joint anywhere.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use crate::joints::{JointId, JointVector};

/// 3-component vector (mm or unit axis).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

#[allow(clippy::should_implement_trait)] // plain math helpers, not operator overloads
impl Vec3 {
    pub const ZERO: Vec3 = Vec3 { x: 0.0, y: 0.0, z: 0.0 };

    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3 { x, y, z }
    }

    pub fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }

    pub fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }

    pub fn scale(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }

    pub fn norm(self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn normalized(self) -> Vec3 {
        let n = self.norm();
        if n == 0.0 {
            Vec3::ZERO
        } else {
            self.scale(1.0 / n)
        }
    }
}

/// Row-major 3x3 rotation matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mat3 {
    pub m: [[f64; 3]; 3],
}

impl Mat3 {
    pub fn identity() -> Self {
        Mat3 {
            m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        }
    }

    /// Rodrigues rotation about a unit axis.
    pub fn axis_angle(axis: Vec3, angle: f64) -> Self {
        let a = axis.normalized();
        let (s, c) = angle.sin_cos();
        let t = 1.0 - c;
        let (x, y, z) = (a.x, a.y, a.z);
        Mat3 {
            m: [
                [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
                [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
                [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
            ],
        }
    }

    pub fn mul(&self, o: &Mat3) -> Mat3 {
        let mut r = [[0.0; 3]; 3];
        for (i, row) in r.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = (0..3).map(|k| self.m[i][k] * o.m[k][j]).sum();
            }
        }
        Mat3 { m: r }
    }

    pub fn apply(&self, v: Vec3) -> Vec3 {
        Vec3::new(
            self.m[0][0] * v.x + self.m[0][1] * v.y + self.m[0][2] * v.z,
            self.m[1][0] * v.x + self.m[1][1] * v.y + self.m[1][2] * v.z,
            self.m[2][0] * v.x + self.m[2][1] * v.y + self.m[2][2] * v.z,
        )
    }

    /// Pitch of this frame's x-axis relative to the parent frame
    /// (positive = x-axis rotated toward -z, i.e. nose down).
    pub fn pitch_of_x_axis(&self) -> f64 {
        // first column = image of (1, 0, 0)
        let x = self.m[0][0];
        let z = self.m[2][0];
        (-z).atan2(x)
    }

    /// Roll of this frame's y-axis relative to the parent frame
    /// (positive = y-axis rotated toward +z).
    pub fn roll_of_y_axis(&self) -> f64 {
        let y = self.m[1][1];
        let z = self.m[2][1];
        z.atan2(y)
    }
}

/// Rigid transform: rotation then translation.
#[derive(Debug, Clone, Copy)]
pub struct Pose {
    pub rot: Mat3,
    pub pos: Vec3,
}

impl Pose {
    pub fn identity() -> Self {
        Pose {
            rot: Mat3::identity(),
            pos: Vec3::ZERO,
        }
    }

    pub fn transform_point(&self, p: Vec3) -> Vec3 {
        self.rot.apply(p).add(self.pos)
    }
}

/// One rigid link of the chain.
#[derive(Debug, Clone)]
pub struct Link {
    pub name: String,
    /// Index into the table; `None` for the root.
    pub parent: Option<usize>,
    /// Joint rotating this link relative to its parent; `None` = fixed.
    pub joint: Option<JointId>,
    /// Joint origin in the parent frame, mm.
    pub offset: Vec3,
    /// Rotation axis in the parent frame (unit, ignored for fixed links).
    pub axis: Vec3,
    pub mass_g: f64,
    /// Link center of mass in the link's own frame, mm.
    pub com_offset: Vec3,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum KinematicsError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("kinematic table has no links")]
    Empty,
    #[error("total mass must be positive")]
    NoMass,
}

/// Parsed kinematic chain, links in parent-before-child order.
#[derive(Debug, Clone)]
pub struct LinkTable {
    links: Vec<Link>,
    by_name: HashMap<String, usize>,
    total_mass: f64,
}

fn parse_err(line: usize, message: impl Into<String>) -> KinematicsError {
    KinematicsError::Parse {
        line,
        message: message.into(),
    }
}

fn take<'a>(
    tokens: &mut impl Iterator<Item = &'a str>,
    line: usize,
    what: &str,
) -> Result<&'a str, KinematicsError> {
    tokens
        .next()
        .ok_or_else(|| parse_err(line, format!("missing {what}")))
}

fn take_f64<'a>(
    tokens: &mut impl Iterator<Item = &'a str>,
    line: usize,
    what: &str,
) -> Result<f64, KinematicsError> {
    let t = take(tokens, line, what)?;
    f64::from_str(t).map_err(|_| parse_err(line, format!("invalid {what} `{t}`")))
}

fn take_key<'a>(
    tokens: &mut impl Iterator<Item = &'a str>,
    line: usize,
    key: &str,
) -> Result<(), KinematicsError> {
    let t = take(tokens, line, key)?;
    if t != key {
        return Err(parse_err(line, format!("expected `{key}`, found `{t}`")));
    }
    Ok(())
}

fn take_vec3<'a>(
    tokens: &mut impl Iterator<Item = &'a str>,
    line: usize,
    what: &str,
) -> Result<Vec3, KinematicsError> {
    Ok(Vec3::new(
        take_f64(tokens, line, what)?,
        take_f64(tokens, line, what)?,
        take_f64(tokens, line, what)?,
    ))
}

impl LinkTable {
    /// Parse the line-oriented table format:
    ///
    /// ```text
    /// link <name> parent <name|-> joint <JointName|fixed> offset <x y z> axis <x y z> mass_g <m> com_offset <x y z>
    /// ```
    ///
    /// `#` starts a comment; blank lines are ignored. Parents must be
    /// declared before their children.
    pub fn parse(text: &str) -> Result<LinkTable, KinematicsError> {
        let mut links: Vec<Link> = Vec::new();
        let mut by_name: HashMap<String, usize> = HashMap::new();

        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut tokens = line.split_whitespace();
            take_key(&mut tokens, line_no, "link")?;
            let name = take(&mut tokens, line_no, "link name")?.to_string();
            if by_name.contains_key(&name) {
                return Err(parse_err(line_no, format!("duplicate link `{name}`")));
            }
            take_key(&mut tokens, line_no, "parent")?;
            let parent_name = take(&mut tokens, line_no, "parent name")?;
            let parent = if parent_name == "-" {
                None
            } else {
                Some(*by_name.get(parent_name).ok_or_else(|| {
                    parse_err(line_no, format!("parent `{parent_name}` not declared yet"))
                })?)
            };
            take_key(&mut tokens, line_no, "joint")?;
            let joint_name = take(&mut tokens, line_no, "joint name")?;
            let joint = if joint_name == "fixed" {
                None
            } else {
                Some(
                    joint_name
                        .parse::<JointId>()
                        .map_err(|e| parse_err(line_no, e.to_string()))?,
                )
            };
            take_key(&mut tokens, line_no, "offset")?;
            let offset = take_vec3(&mut tokens, line_no, "offset component")?;
            take_key(&mut tokens, line_no, "axis")?;
            let axis = take_vec3(&mut tokens, line_no, "axis component")?;
            take_key(&mut tokens, line_no, "mass_g")?;
            let mass_g = take_f64(&mut tokens, line_no, "mass")?;
            if mass_g < 0.0 || !mass_g.is_finite() {
                return Err(parse_err(line_no, "mass must be finite and non-negative"));
            }
            take_key(&mut tokens, line_no, "com_offset")?;
            let com_offset = take_vec3(&mut tokens, line_no, "com_offset component")?;
            if let Some(extra) = tokens.next() {
                return Err(parse_err(line_no, format!("unexpected token `{extra}`")));
            }
            if joint.is_some() && axis.norm() == 0.0 {
                return Err(parse_err(line_no, "rotating link needs a non-zero axis"));
            }

            by_name.insert(name.clone(), links.len());
            links.push(Link {
                name,
                parent,
                joint,
                offset,
                axis,
                mass_g,
                com_offset,
            });
        }

        if links.is_empty() {
            return Err(KinematicsError::Empty);
        }
        let total_mass: f64 = links.iter().map(|l| l.mass_g).sum();
        if total_mass <= 0.0 {
            return Err(KinematicsError::NoMass);
        }
        Ok(LinkTable {
            links,
            by_name,
            total_mass,
        })
    }

    /// The NAO-like table shipped with the project.
    pub fn builtin() -> LinkTable {
        LinkTable::parse(include_str!("../../../data/links.kin"))
            .expect("shipped kinematic table must parse")
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn total_mass_g(&self) -> f64 {
        self.total_mass
    }

    pub fn link_index(&self, name: &str) -> Option<usize> {
        self.by_name.get(name).copied()
    }

    /// Forward kinematics for every link.
    pub fn forward(&self, joints: &JointVector) -> Fk {
        let mut poses = Vec::with_capacity(self.links.len());
        let mut weighted = Vec3::ZERO;
        for link in &self.links {
            let parent_pose = match link.parent {
                Some(p) => poses[p],
                None => Pose::identity(),
            };
            let local_rot = match link.joint {
                Some(j) => Mat3::axis_angle(link.axis, joints[j]),
                None => Mat3::identity(),
            };
            let pos = parent_pose.transform_point(link.offset);
            let rot = parent_pose.rot.mul(&local_rot);
            let pose = Pose { rot, pos };
            weighted = weighted.add(pose.transform_point(link.com_offset).scale(link.mass_g));
            poses.push(pose);
        }
        Fk {
            com: weighted.scale(1.0 / self.total_mass),
            poses,
        }
    }

    /// Whole-body center of mass in the torso frame, mm.
    pub fn com_of(&self, joints: &JointVector) -> Vec3 {
        self.forward(joints).com
    }
}

/// Result of one forward-kinematics pass.
#[derive(Debug, Clone)]
pub struct Fk {
    /// Mass-weighted mean of all link mass points, torso frame, mm.
    pub com: Vec3,
    poses: Vec<Pose>,
}

impl Fk {
    pub fn pose(&self, link_index: usize) -> &Pose {
        &self.poses[link_index]
    }
}

impl fmt::Display for Vec3 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({:.3}, {:.3}, {:.3})", self.x, self.y, self.z)
    }
}
