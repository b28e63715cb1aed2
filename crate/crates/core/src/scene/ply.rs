//! Binary little-endian PLY in the layout written by the reference Gaussian
//! splatting trainer.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use nalgebra::{Quaternion, Vector3};

use super::{sh_coeff_count, Gaussian, GaussianScene, SceneError, MAX_SH_DEGREE};

#[derive(Debug, Clone, Copy, PartialEq)]
enum ScalarType {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl ScalarType {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "char" | "int8" => Self::I8,
            "uchar" | "uint8" => Self::U8,
            "short" | "int16" => Self::I16,
            "ushort" | "uint16" => Self::U16,
            "int" | "int32" => Self::I32,
            "uint" | "uint32" => Self::U32,
            "float" | "float32" => Self::F32,
            "double" | "float64" => Self::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Self::I8 | Self::U8 => 1,
            Self::I16 | Self::U16 => 2,
            Self::I32 | Self::U32 | Self::F32 => 4,
            Self::F64 => 8,
        }
    }

    fn read<R: Read>(self, r: &mut R) -> std::io::Result<f64> {
        Ok(match self {
            Self::I8 => r.read_i8()? as f64,
            Self::U8 => r.read_u8()? as f64,
            Self::I16 => r.read_i16::<LittleEndian>()? as f64,
            Self::U16 => r.read_u16::<LittleEndian>()? as f64,
            Self::I32 => r.read_i32::<LittleEndian>()? as f64,
            Self::U32 => r.read_u32::<LittleEndian>()? as f64,
            Self::F32 => r.read_f32::<LittleEndian>()? as f64,
            Self::F64 => r.read_f64::<LittleEndian>()?,
        })
    }
}

struct Element {
    name: String,
    count: usize,
    properties: Vec<(String, ScalarType)>,
}

fn format_err(msg: impl Into<String>) -> SceneError {
    SceneError::Format(msg.into())
}

fn parse_header<R: BufRead>(r: &mut R) -> Result<Vec<Element>, SceneError> {
    let mut line = String::new();
    let next_line = |r: &mut R, line: &mut String| -> Result<(), SceneError> {
        line.clear();
        if r.read_line(line)? == 0 {
            return Err(format_err("unexpected end of header"));
        }
        Ok(())
    };
    next_line(r, &mut line)?;
    if line.trim_end() != "ply" {
        return Err(format_err("missing ply magic"));
    }
    let mut elements: Vec<Element> = Vec::new();
    let mut saw_format = false;
    loop {
        next_line(r, &mut line)?;
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some("format") => {
                if tok.next() != Some("binary_little_endian") {
                    return Err(format_err("only binary_little_endian is supported"));
                }
                saw_format = true;
            }
            Some("comment") | Some("obj_info") | None => {}
            Some("element") => {
                let name = tok.next().ok_or_else(|| format_err("element without name"))?;
                let count = tok
                    .next()
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| format_err(format!("element {name} has no count")))?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    properties: Vec::new(),
                });
            }
            Some("property") => {
                let elem = elements
                    .last_mut()
                    .ok_or_else(|| format_err("property before element"))?;
                let ty = tok.next().ok_or_else(|| format_err("property without type"))?;
                if ty == "list" {
                    return Err(format_err(format!(
                        "list properties are not supported (element {})",
                        elem.name
                    )));
                }
                let ty = ScalarType::parse(ty)
                    .ok_or_else(|| format_err(format!("unknown property type {ty}")))?;
                let name = tok.next().ok_or_else(|| format_err("property without name"))?;
                elem.properties.push((name.to_string(), ty));
            }
            Some("end_header") => break,
            Some(other) => return Err(format_err(format!("unexpected header keyword {other}"))),
        }
    }
    if !saw_format {
        return Err(format_err("missing format line"));
    }
    Ok(elements)
}

/// Reads a Gaussian scene from a PLY stream.
pub fn read_ply<R: BufRead>(mut r: R) -> Result<GaussianScene, SceneError> {
    let elements = parse_header(&mut r)?;
    let vertex_pos = elements
        .iter()
        .position(|e| e.name == "vertex")
        .ok_or_else(|| format_err("vertex"))?;
    for e in &elements[..vertex_pos] {
        let stride: usize = e.properties.iter().map(|(_, t)| t.size()).sum();
        let skip = (stride * e.count) as u64;
        let copied = std::io::copy(&mut (&mut r).take(skip), &mut std::io::sink())?;
        if copied != skip {
            return Err(format_err(format!("truncated element {}", e.name)));
        }
    }
    let vertex = &elements[vertex_pos];
    let find = |name: &str| -> Result<usize, SceneError> {
        vertex
            .properties
            .iter()
            .position(|(n, _)| n == name)
            .ok_or_else(|| format_err(name))
    };

    let rest_count = vertex
        .properties
        .iter()
        .filter(|(n, _)| n.starts_with("f_rest_"))
        .count();
    let sh_degree = (0..=MAX_SH_DEGREE)
        .find(|&d| 3 * (sh_coeff_count(d) - 1) == rest_count)
        .ok_or_else(|| format_err(format!("{rest_count} f_rest properties match no sh degree")))?;
    let coeffs = sh_coeff_count(sh_degree);

    let pos = [find("x")?, find("y")?, find("z")?];
    let dc = [find("f_dc_0")?, find("f_dc_1")?, find("f_dc_2")?];
    let rest: Vec<usize> = (0..rest_count)
        .map(|k| find(&format!("f_rest_{k}")))
        .collect::<Result<_, _>>()?;
    let opacity = find("opacity")?;
    let scale = [find("scale_0")?, find("scale_1")?, find("scale_2")?];
    let rot = [find("rot_0")?, find("rot_1")?, find("rot_2")?, find("rot_3")?];

    let mut scene = GaussianScene::new(sh_degree)?;
    let mut row = vec![0.0f64; vertex.properties.len()];
    for v in 0..vertex.count {
        for (slot, (_, ty)) in row.iter_mut().zip(&vertex.properties) {
            *slot = ty.read(&mut r).map_err(|e| {
                if e.kind() == std::io::ErrorKind::UnexpectedEof {
                    format_err(format!("truncated vertex data at vertex {v}"))
                } else {
                    e.into()
                }
            })?;
        }
        if let Some(k) = row.iter().position(|x| !x.is_finite()) {
            return Err(SceneError::Validation {
                vertex: v,
                message: format!("non-finite {}", vertex.properties[k].0),
            });
        }
        let mut sh = vec![[0.0; 3]; coeffs];
        sh[0] = dc.map(|k| row[k]);
        // f_rest is channel-major: all red coefficients, then green, then blue
        for c in 0..3 {
            for k in 1..coeffs {
                sh[k][c] = row[rest[c * (coeffs - 1) + (k - 1)]];
            }
        }
        let g = Gaussian {
            position: Vector3::new(row[pos[0]], row[pos[1]], row[pos[2]]),
            opacity_logit: row[opacity],
            scale_log: Vector3::new(row[scale[0]], row[scale[1]], row[scale[2]]),
            rotation: Quaternion::new(row[rot[0]], row[rot[1]], row[rot[2]], row[rot[3]]),
            sh,
        };
        scene.push(g)?;
    }
    Ok(scene)
}

/// Writes `scene` as binary little-endian PLY with `f32` properties.
/// Normals are written as zero.
pub fn write_ply<W: Write>(scene: &GaussianScene, mut w: W) -> Result<(), SceneError> {
    let coeffs = sh_coeff_count(scene.sh_degree());
    let mut header = String::from("ply\nformat binary_little_endian 1.0\n");
    header.push_str(&format!("element vertex {}\n", scene.len()));
    for name in ["x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"] {
        header.push_str(&format!("property float {name}\n"));
    }
    for k in 0..3 * (coeffs - 1) {
        header.push_str(&format!("property float f_rest_{k}\n"));
    }
    for name in ["opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"] {
        header.push_str(&format!("property float {name}\n"));
    }
    header.push_str("end_header\n");
    w.write_all(header.as_bytes())?;

    let mut put = |v: f64| w.write_f32::<LittleEndian>(v as f32);
    for g in scene.gaussians() {
        for v in g.position.iter() {
            put(*v)?;
        }
        for _ in 0..3 {
            put(0.0)?;
        }
        for c in 0..3 {
            put(g.sh[0][c])?;
        }
        for c in 0..3 {
            for k in 1..coeffs {
                put(g.sh[k][c])?;
            }
        }
        put(g.opacity_logit)?;
        for v in g.scale_log.iter() {
            put(*v)?;
        }
        for v in [g.rotation.w, g.rotation.i, g.rotation.j, g.rotation.k] {
            put(v)?;
        }
    }
    Ok(())
}

pub fn load_ply(path: impl AsRef<Path>) -> Result<GaussianScene, SceneError> {
    read_ply(BufReader::new(File::open(path)?))
}

pub fn save_ply(scene: &GaussianScene, path: impl AsRef<Path>) -> Result<(), SceneError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_ply(scene, &mut w)?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn header(props: &[&str], n: usize) -> Vec<u8> {
        let mut h = format!("ply\nformat binary_little_endian 1.0\nelement vertex {n}\n");
        for p in props {
            h.push_str(&format!("property float {p}\n"));
        }
        h.push_str("end_header\n");
        h.into_bytes()
    }

    const BASE: [&str; 14] = [
        "x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2", "opacity", "scale_0", "scale_1", "scale_2",
        "rot_0", "rot_1", "rot_2", "rot_3",
    ];

    fn one_vertex(props: &[&str], values: &[f32]) -> Vec<u8> {
        let mut bytes = header(props, 1);
        for v in values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        bytes
    }

    #[test]
    fn zero_opacity_logit_is_half() {
        let bytes = one_vertex(&BASE, &[0.0, 0.0, 0.0, 0.1, 0.2, 0.3, 0.0, -1.0, -1.0, -1.0, 1.0, 0.0, 0.0, 0.0]);
        let scene = read_ply(&bytes[..]).unwrap();
        assert_eq!(scene.len(), 1);
        assert_eq!(scene.sh_degree(), 0);
        assert_eq!(scene.gaussians()[0].opacity(), 0.5);
    }

    #[test]
    fn missing_property_is_named() {
        let props: Vec<&str> = BASE.iter().copied().filter(|p| *p != "rot_3").collect();
        let bytes = one_vertex(&props, &[0.0; 13]);
        match read_ply(&bytes[..]) {
            Err(SceneError::Format(m)) => assert_eq!(m, "rot_3"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn non_finite_value_reports_vertex() {
        let mut bytes = header(&BASE, 2);
        for v in [0.0f32; 14].iter().chain([0.0, f32::NAN, 0.0, 0.1, 0.2, 0.3, 0.0, -1.0, -1.0, -1.0, 1.0, 0.0, 0.0, 0.0].iter()) {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        // first vertex has a zero quaternion but is finite
        match read_ply(&bytes[..]) {
            Err(SceneError::Validation { vertex, .. }) => assert_eq!(vertex, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn ascii_and_truncated_inputs_fail() {
        let ascii = b"ply\nformat ascii 1.0\nelement vertex 0\nend_header\n";
        assert!(matches!(read_ply(&ascii[..]), Err(SceneError::Format(_))));
        let mut bytes = one_vertex(&BASE, &[0.0; 14]);
        bytes.truncate(bytes.len() - 3);
        assert!(matches!(read_ply(&bytes[..]), Err(SceneError::Format(_))));
    }

    #[test]
    fn extra_properties_and_double_types_are_accepted() {
        let mut h = String::from("ply\nformat binary_little_endian 1.0\ncomment made by hand\nelement vertex 1\n");
        h.push_str("property double x\nproperty float y\nproperty float z\nproperty uchar red\n");
        for p in &BASE[3..] {
            h.push_str(&format!("property float {p}\n"));
        }
        h.push_str("end_header\n");
        let mut bytes = h.into_bytes();
        bytes.extend_from_slice(&1.5f64.to_le_bytes());
        bytes.extend_from_slice(&2.0f32.to_le_bytes());
        bytes.extend_from_slice(&3.0f32.to_le_bytes());
        bytes.push(200);
        for v in [0.1f32, 0.2, 0.3, 0.0, -1.0, -1.0, -1.0, 1.0, 0.0, 0.0, 0.0] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let scene = read_ply(&bytes[..]).unwrap();
        assert_eq!(scene.gaussians()[0].position, Vector3::new(1.5, 2.0, 3.0));
    }

    #[test]
    fn sh_rest_layout_is_channel_major() {
        let mut scene = GaussianScene::new(1).unwrap();
        let mut g = Gaussian::isotropic(Vector3::zeros(), 0.1, 0.5, [0.5; 3], 1);
        for k in 1..4 {
            g.sh[k] = [k as f64, 10.0 + k as f64, 20.0 + k as f64];
        }
        scene.push(g).unwrap();
        let mut buf = Vec::new();
        write_ply(&scene, &mut buf).unwrap();
        let payload = &buf[buf.len() - 4 * (3 + 3 + 3 + 9 + 1 + 3 + 4)..];
        let floats: Vec<f32> = payload
            .chunks(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        assert_eq!(&floats[9..18], &[1.0, 2.0, 3.0, 11.0, 12.0, 13.0, 21.0, 22.0, 23.0]);
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for degree in 0..=3 {
            let mut scene = GaussianScene::new(degree).unwrap();
            for _ in 0..20 {
                let mut g = Gaussian::isotropic(
                    Vector3::new(rng.gen(), rng.gen(), rng.gen()),
                    0.1,
                    0.7,
                    [0.3, 0.4, 0.5],
                    degree,
                );
                for c in g.sh.iter_mut().flatten() {
                    *c = rng.gen_range(-1.0..1.0);
                }
                g.scale_log = Vector3::new(rng.gen(), rng.gen(), rng.gen());
                g.rotation = Quaternion::new(rng.gen(), rng.gen(), rng.gen(), rng.gen());
                g.quantize();
                scene.push(g).unwrap();
            }
            let mut first = Vec::new();
            write_ply(&scene, &mut first).unwrap();
            let back = read_ply(&first[..]).unwrap();
            assert_eq!(back, scene);
            let mut second = Vec::new();
            write_ply(&back, &mut second).unwrap();
            assert_eq!(first, second);
        }
    }
}
