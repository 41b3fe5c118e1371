//! File formats: frame/latent/pose/parameter CSVs, reports and 8-bit PGM.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::flow_match::AffineField;
use crate::latent_codec::{Frame, FrameSeq, FrameShape, LatentSeq, Layout};
use crate::linalg::Matrix;
use crate::pose_align::{PoseSequence, SkeletonTree};
use crate::scalar::Scalar;
use crate::shift_sampler::WindowSchedule;

fn parse_num<T: Scalar>(s: &str) -> Result<T> {
    s.trim().parse::<T>().map_err(|_| Error::Parse(format!("not a number: `{s}`")))
}

fn parse_usize(s: &str) -> Result<usize> {
    s.trim().parse::<usize>().map_err(|_| Error::Parse(format!("not a non-negative integer: `{s}`")))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

/// Splits off the first line, which must be a `# key ...` comment, and
/// returns its fields after the key together with the remaining reader.
fn read_header(path: &Path, key: &str) -> Result<(Vec<String>, BufReader<File>)> {
    let mut reader = BufReader::new(File::open(path)?);
    let mut line = String::new();
    reader.read_line(&mut line)?;
    let mut parts = line.trim().trim_start_matches('#').split_whitespace();
    if parts.next() != Some(key) {
        return Err(Error::Parse(format!("{}: expected a `# {key}` header line", path.display())));
    }
    Ok((parts.map(str::to_owned).collect(), reader))
}

fn data_rows<R: Read>(reader: R, has_headers: bool) -> Result<Vec<csv::StringRecord>> {
    let mut rdr =
        csv::ReaderBuilder::new().has_headers(has_headers).comment(Some(b'#')).flexible(true).from_reader(reader);
    Ok(rdr.records().collect::<std::result::Result<_, _>>()?)
}

fn write_rows<W: Write>(out: W, header: Option<&[&str]>, rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).flexible(true).from_writer(out);
    if let Some(h) = header {
        w.write_record(h)?;
    }
    for row in rows {
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn fmt_all<T: Scalar>(xs: &[T]) -> Vec<String> {
    xs.iter().map(|x| x.to_string()).collect()
}

/// One row per frame (row-major `y, x, c`) after a `# frame_shape H W C` line.
pub fn write_frames_csv<T: Scalar>(path: impl AsRef<Path>, video: &FrameSeq<T>) -> Result<()> {
    let mut out = create(path.as_ref())?;
    let s = video.shape();
    writeln!(out, "# frame_shape {} {} {}", s.height, s.width, s.channels)?;
    write_rows(out, None, video.iter().map(|f| fmt_all(f.as_slice())))
}

pub fn read_frames_csv<T: Scalar>(path: impl AsRef<Path>) -> Result<FrameSeq<T>> {
    let path = path.as_ref();
    let (fields, rest) = read_header(path, "frame_shape")?;
    if fields.len() != 3 {
        return Err(Error::Parse("frame_shape needs H W C".into()));
    }
    let shape = FrameShape::new(parse_usize(&fields[0])?, parse_usize(&fields[1])?, parse_usize(&fields[2])?);
    let frames = data_rows(rest, false)?
        .iter()
        .map(|rec| Frame::new(shape, rec.iter().map(parse_num).collect::<Result<_>>()?))
        .collect::<Result<Vec<_>>>()?;
    FrameSeq::new(frames)
}

/// One row per token after a `# layout <name> [H W C]` line.
pub fn write_latents_csv<T: Scalar>(path: impl AsRef<Path>, latents: &LatentSeq<T>) -> Result<()> {
    let mut out = create(path.as_ref())?;
    match latents.frame_shape() {
        Some(s) => writeln!(out, "# layout {} {} {} {}", latents.layout().name(), s.height, s.width, s.channels)?,
        None => writeln!(out, "# layout {}", latents.layout().name())?,
    }
    write_rows(out, None, latents.tokens().iter().map(|t| fmt_all(t)))
}

pub fn read_latents_csv<T: Scalar>(path: impl AsRef<Path>) -> Result<LatentSeq<T>> {
    let path = path.as_ref();
    let (fields, rest) = read_header(path, "layout")?;
    let layout: Layout = fields.first().ok_or_else(|| Error::Parse("layout name missing".into()))?.parse()?;
    let tokens = data_rows(rest, false)?
        .iter()
        .map(|rec| rec.iter().map(parse_num).collect::<Result<Vec<T>>>())
        .collect::<Result<Vec<_>>>()?;
    let seq = LatentSeq::new(tokens, layout)?;
    match fields.len() {
        1 => Ok(seq),
        4 => seq.with_frame_shape(FrameShape::new(
            parse_usize(&fields[1])?,
            parse_usize(&fields[2])?,
            parse_usize(&fields[3])?,
        )),
        _ => Err(Error::Parse("layout header must be `# layout NAME [H W C]`".into())),
    }
}

/// `tensor,values...` rows named `A` (row-major), `b` and `c`.
pub fn write_affine_csv<T: Scalar>(path: impl AsRef<Path>, model: &AffineField<T>) -> Result<()> {
    let out = create(path.as_ref())?;
    let rows = [("A", model.a.as_slice()), ("b", model.b.as_slice()), ("c", model.c.as_slice())]
        .into_iter()
        .map(|(name, vals)| std::iter::once(name.to_owned()).chain(fmt_all(vals)).collect());
    write_rows(out, Some(&["tensor", "values"]), rows)
}

pub fn read_affine_csv<T: Scalar>(path: impl AsRef<Path>) -> Result<AffineField<T>> {
    let rows = data_rows(File::open(path.as_ref())?, true)?;
    let get = |name: &str| -> Result<Vec<T>> {
        let rec = rows
            .iter()
            .find(|r| r.get(0) == Some(name))
            .ok_or_else(|| Error::Parse(format!("missing tensor `{name}`")))?;
        rec.iter().skip(1).map(parse_num).collect()
    };
    let b = get("b")?;
    let c = get("c")?;
    let a = Matrix::new(b.len(), b.len(), get("A")?)?;
    AffineField::new(a, b, c)
}

pub fn write_loss_csv<T: Scalar>(path: impl AsRef<Path>, losses: &[T]) -> Result<()> {
    let out = create(path.as_ref())?;
    let rows = losses.iter().enumerate().map(|(i, l)| vec![i.to_string(), l.to_string()]);
    write_rows(out, Some(&["step", "loss"]), rows)
}

/// `# parents p0 p1 ...` then `frame,joint,x,y` rows.
pub fn write_pose_csv<T: Scalar>(path: impl AsRef<Path>, poses: &PoseSequence<T>) -> Result<()> {
    let mut out = create(path.as_ref())?;
    let parents: Vec<String> = poses.tree().parents().iter().map(usize::to_string).collect();
    writeln!(out, "# parents {}", parents.join(" "))?;
    let rows = poses.frames().iter().enumerate().flat_map(|(k, joints)| {
        joints
            .iter()
            .enumerate()
            .map(move |(j, p)| vec![k.to_string(), j.to_string(), p[0].to_string(), p[1].to_string()])
    });
    write_rows(out, Some(&["frame", "joint", "x", "y"]), rows)
}

pub fn read_pose_csv<T: Scalar>(path: impl AsRef<Path>) -> Result<PoseSequence<T>> {
    let path = path.as_ref();
    let (fields, rest) = read_header(path, "parents")?;
    let tree = SkeletonTree::new(fields.iter().map(|s| parse_usize(s)).collect::<Result<_>>()?)?;
    let j = tree.joint_count();
    let mut frames: Vec<Vec<[T; 2]>> = Vec::new();
    for rec in data_rows(rest, true)? {
        if rec.len() != 4 {
            return Err(Error::Parse("pose rows need frame,joint,x,y".into()));
        }
        let (k, joint) = (parse_usize(&rec[0])?, parse_usize(&rec[1])?);
        if joint == 0 {
            if k != frames.len() {
                return Err(Error::Parse(format!("expected frame {}, got {k}", frames.len())));
            }
            frames.push(Vec::with_capacity(j));
        }
        let expected_joint = frames.last().map_or(0, Vec::len);
        if frames.len() != k + 1 || joint != expected_joint {
            return Err(Error::Parse(format!("pose rows out of order at frame {k}, joint {joint}")));
        }
        let cur = frames.last_mut().expect("frame started");
        cur.push([parse_num(&rec[2])?, parse_num(&rec[3])?]);
    }
    PoseSequence::new(tree, frames)
}

/// `timestep,alpha_sum,starts` with starts space-separated.
pub fn write_window_log(path: impl AsRef<Path>, schedules: &[WindowSchedule]) -> Result<()> {
    let out = create(path.as_ref())?;
    let rows = schedules.iter().enumerate().map(|(k, s)| {
        let starts: Vec<String> = s.starts().iter().map(usize::to_string).collect();
        vec![k.to_string(), s.alpha_sum.to_string(), starts.join(" ")]
    });
    write_rows(out, Some(&["timestep", "alpha_sum", "starts"]), rows)
}

pub fn write_sharpness_csv<T: Scalar>(path: impl AsRef<Path>, values: &[T]) -> Result<()> {
    let out = create(path.as_ref())?;
    let rows = values.iter().enumerate().map(|(i, v)| vec![i.to_string(), v.to_string()]);
    write_rows(out, Some(&["frame_index", "sharpness"]), rows)
}

/// Code matrix, one row per frame.
pub fn write_matrix_csv<T: Scalar>(path: impl AsRef<Path>, m: &Matrix<T>) -> Result<()> {
    let out = create(path.as_ref())?;
    write_rows(out, None, (0..m.rows()).map(|r| fmt_all(m.row(r))))
}

/// Generic table writer for reports.
pub fn write_table(path: impl AsRef<Path>, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let out = create(path.as_ref())?;
    write_rows(out, Some(header), rows.iter().cloned())
}

fn to_byte<T: Scalar>(v: T) -> u8 {
    let x = v.to_f64_lossy();
    if x.is_nan() {
        return 0;
    }
    (x.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Binary 8-bit PGM of a luminance plane; values are clamped to `[0, 1]`.
pub fn write_pgm<T: Scalar>(path: impl AsRef<Path>, plane: &Matrix<T>) -> Result<()> {
    let mut out = create(path.as_ref())?;
    write!(out, "P5\n{} {}\n255\n", plane.cols(), plane.rows())?;
    let bytes: Vec<u8> = plane.as_slice().iter().map(|&v| to_byte(v)).collect();
    out.write_all(&bytes)?;
    out.flush()?;
    Ok(())
}

pub fn read_pgm<T: Scalar>(path: impl AsRef<Path>) -> Result<Matrix<T>> {
    let mut bytes = Vec::new();
    File::open(path.as_ref())?.read_to_end(&mut bytes)?;
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Parse("truncated PGM header".into()));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1;
    if fields[0] != "P5" || fields[3] != "255" {
        return Err(Error::Parse("only binary 8-bit PGM (P5, maxval 255) is supported".into()));
    }
    let (w, h) = (parse_usize(&fields[1])?, parse_usize(&fields[2])?);
    let data = bytes.get(pos..pos + w * h).ok_or_else(|| Error::Parse("truncated PGM data".into()))?;
    Matrix::new(h, w, data.iter().map(|&b| T::from_usize_lossy(b as usize) / T::lit(255.0)).collect())
}

/// Evenly spaced frames (at most `count`) laid side by side, separated by a one-pixel black gap.
pub fn frame_strip<T: Scalar>(video: &FrameSeq<T>, count: usize) -> Matrix<T> {
    let n = video.len();
    let count = count.clamp(1, n);
    let picks: Vec<usize> = (0..count).map(|i| if count == 1 { 0 } else { i * (n - 1) / (count - 1) }).collect();
    let s = video.shape();
    let width = count * s.width + (count - 1);
    let mut strip = Matrix::zeros(s.height, width);
    for (slot, &k) in picks.iter().enumerate() {
        let lum = video.frame(k).luminance();
        let x0 = slot * (s.width + 1);
        for y in 0..s.height {
            for x in 0..s.width {
                strip.set(y, x0 + x, lum.get(y, x));
            }
        }
    }
    strip
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::latent_codec::encode_uniform;

    #[test]
    fn frames_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.csv");
        let shape = FrameShape::new(2, 3, 1);
        let v = FrameSeq::new(
            (0..4).map(|k| Frame::new(shape, (0..6).map(|i| (k * 6 + i) as f64 / 37.0).collect()).unwrap()).collect(),
        )
        .unwrap();
        write_frames_csv(&p, &v).unwrap();
        assert_eq!(read_frames_csv::<f64>(&p).unwrap(), v);

        let lat = encode_uniform(&v).unwrap();
        let q = dir.path().join("z.csv");
        write_latents_csv(&q, &lat).unwrap();
        assert_eq!(read_latents_csv::<f64>(&q).unwrap(), lat);
    }

    #[test]
    fn affine_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        let m =
            AffineField::new(Matrix::new(2, 2, vec![0.1, -2.0, 3.5, 1e-9]).unwrap(), vec![1.0, 2.0], vec![-0.3, 0.7])
                .unwrap();
        write_affine_csv(&p, &m).unwrap();
        assert_eq!(read_affine_csv::<f64>(&p).unwrap(), m);
    }

    #[test]
    fn pose_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("p.csv");
        let tree = SkeletonTree::new(vec![0, 0, 1]).unwrap();
        let seq = PoseSequence::new(
            tree,
            vec![vec![[0.0, 1.0], [2.0, 3.0], [4.5, 5.0]], vec![[1.0, 1.0], [2.0, 2.0], [3.0, 3.0]]],
        )
        .unwrap();
        write_pose_csv(&p, &seq).unwrap();
        assert_eq!(read_pose_csv::<f64>(&p).unwrap(), seq);
    }

    #[test]
    fn pgm_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("i.pgm");
        let m = Matrix::from_fn(3, 5, |y, x| ((y * 5 + x) * 17) as f64 / 255.0);
        write_pgm(&p, &m).unwrap();
        let back: Matrix<f64> = read_pgm(&p).unwrap();
        for (a, b) in back.as_slice().iter().zip(m.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn strip_width() {
        let v = FrameSeq::from_scalars(&[0.0f64; 10]).unwrap();
        assert_eq!(frame_strip(&v, 4).shape(), (1, 7));
    }
}
