// SPDX-License-Identifier: Apache-2.0

//! Minimal ISO base media (MP4) muxer and demuxer.
//!
//! Video samples are PNG-coded frames (`png ` sample entry), audio is mono
//! 16-bit little-endian PCM (`sowt`). Both codecs are lossless, so frames
//! decode back bit-exact, and the writer emits no timestamps, so identical
//! input gives identical files. ffmpeg and players built on it decode these
//! files.

use std::fs::File;
use std::io::{BufWriter, Read, Seek, SeekFrom, Write};
use std::path::Path;

use crate::animation::FrameSequence;
use crate::image::{ImageBuffer, ImageError};
use crate::voicing::AudioSegment;

#[derive(Debug, thiserror::Error)]
pub enum ContainerError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("frame: {0}")]
    Image(#[from] ImageError),
    #[error("malformed mp4: {0}")]
    Malformed(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
}

const MOVIE_TIMESCALE: u32 = 1000;
const MATRIX: [u32; 9] = [0x0001_0000, 0, 0, 0, 0x0001_0000, 0, 0, 0, 0x4000_0000];

fn bx(kind: &[u8; 4], body: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(body.len() + 8);
    out.extend_from_slice(&((body.len() + 8) as u32).to_be_bytes());
    out.extend_from_slice(kind);
    out.extend_from_slice(body);
    out
}

fn full_box(kind: &[u8; 4], version: u8, flags: u32, body: &[u8]) -> Vec<u8> {
    let mut b = Vec::with_capacity(body.len() + 4);
    b.push(version);
    b.extend_from_slice(&flags.to_be_bytes()[1..]);
    b.extend_from_slice(body);
    bx(kind, &b)
}

#[derive(Default)]
struct Buf(Vec<u8>);

impl Buf {
    fn u8(&mut self, v: u8) -> &mut Self {
        self.0.push(v);
        self
    }
    fn u16(&mut self, v: u16) -> &mut Self {
        self.0.extend_from_slice(&v.to_be_bytes());
        self
    }
    fn u32(&mut self, v: u32) -> &mut Self {
        self.0.extend_from_slice(&v.to_be_bytes());
        self
    }
    fn u64(&mut self, v: u64) -> &mut Self {
        self.0.extend_from_slice(&v.to_be_bytes());
        self
    }
    fn zeros(&mut self, n: usize) -> &mut Self {
        self.0.resize(self.0.len() + n, 0);
        self
    }
    fn bytes(&mut self, b: &[u8]) -> &mut Self {
        self.0.extend_from_slice(b);
        self
    }
    fn matrix(&mut self) -> &mut Self {
        for m in MATRIX {
            self.u32(m);
        }
        self
    }
    fn take(&mut self) -> Vec<u8> {
        std::mem::take(&mut self.0)
    }
}

/// Streaming writer: frames go straight to disk, the index is written on
/// [`Mp4Writer::finish`].
pub struct Mp4Writer {
    out: BufWriter<File>,
    width: usize,
    height: usize,
    fps: f64,
    mdat_start: u64,
    cursor: u64,
    sizes: Vec<u32>,
    video_offset: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mp4Summary {
    pub frames: usize,
    pub fps: f64,
    pub video_duration_s: f64,
    pub audio_duration_s: Option<f64>,
    pub duration_s: f64,
}

impl Mp4Writer {
    pub fn create(path: &Path, width: usize, height: usize, fps: f64) -> Result<Self, ContainerError> {
        if fps.is_nan() || fps <= 0.0 || (fps * 1000.0).round() > u32::MAX as f64 {
            return Err(ContainerError::Unsupported(format!("frame rate {fps}")));
        }
        if width > u16::MAX as usize || height > u16::MAX as usize {
            return Err(ContainerError::Unsupported(format!("frame size {width}x{height}")));
        }
        let mut out = BufWriter::new(File::create(path)?);
        let mut ftyp = Buf::default();
        ftyp.bytes(b"isom").u32(0x200).bytes(b"isom").bytes(b"iso2").bytes(b"mp41");
        let ftyp = bx(b"ftyp", &ftyp.take());
        out.write_all(&ftyp)?;
        let mdat_start = ftyp.len() as u64;
        // 64-bit mdat header, size patched on finish.
        out.write_all(&1u32.to_be_bytes())?;
        out.write_all(b"mdat")?;
        out.write_all(&0u64.to_be_bytes())?;
        let cursor = mdat_start + 16;
        Ok(Self {
            out,
            width,
            height,
            fps,
            mdat_start,
            cursor,
            sizes: Vec::new(),
            video_offset: cursor,
        })
    }

    pub fn push_frame(&mut self, frame: &ImageBuffer) -> Result<(), ContainerError> {
        if frame.width() != self.width || frame.height() != self.height {
            return Err(ContainerError::Unsupported(format!(
                "frame {}x{} in a {}x{} stream",
                frame.width(),
                frame.height(),
                self.width,
                self.height
            )));
        }
        let png = frame.encode_png()?;
        self.out.write_all(&png)?;
        self.cursor += png.len() as u64;
        self.sizes.push(
            u32::try_from(png.len()).map_err(|_| ContainerError::Unsupported("frame larger than 4 GiB".into()))?,
        );
        Ok(())
    }

    pub fn finish(mut self, audio: Option<&AudioSegment>) -> Result<Mp4Summary, ContainerError> {
        let audio = audio.filter(|a| !a.is_empty());
        if let Some(a) = audio {
            if a.sample_rate > u16::MAX as u32 {
                return Err(ContainerError::Unsupported(format!("sample rate {}", a.sample_rate)));
            }
        }
        let audio_offset = self.cursor;
        if let Some(a) = audio {
            let mut pcm = Vec::with_capacity(a.len() * 2);
            for &s in &a.samples {
                pcm.extend_from_slice(&crate::voicing::f32_to_i16(s).to_le_bytes());
            }
            self.out.write_all(&pcm)?;
            self.cursor += pcm.len() as u64;
        }

        let video_ts = (self.fps * 1000.0).round() as u32;
        let frames = self.sizes.len();
        let video_duration_s = frames as f64 / self.fps;
        let audio_duration_s = audio.map(|a| a.duration_s());
        let duration_s = video_duration_s.max(audio_duration_s.unwrap_or(0.0));
        let to_movie = |s: f64| (s * MOVIE_TIMESCALE as f64).round() as u32;
        let wide = self.cursor > u32::MAX as u64;

        let mut traks = Vec::new();
        traks.push(self.video_trak(1, video_ts, to_movie(video_duration_s), wide));
        if let Some(a) = audio {
            traks.push(audio_trak(2, a, audio_offset, to_movie(a.duration_s()), wide));
        }

        let mut mvhd = Buf::default();
        mvhd.u32(0).u32(0).u32(MOVIE_TIMESCALE).u32(to_movie(duration_s));
        mvhd.u32(0x0001_0000).u16(0x0100).zeros(10).matrix().zeros(24);
        mvhd.u32(traks.len() as u32 + 1);
        let mut moov = full_box(b"mvhd", 0, 0, &mvhd.take());
        for t in traks {
            moov.extend_from_slice(&t);
        }
        let moov = bx(b"moov", &moov);

        let mdat_size = self.cursor - self.mdat_start;
        self.out.write_all(&moov)?;
        self.out.flush()?;
        let mut file = self.out.into_inner().map_err(|e| e.into_error())?;
        file.seek(SeekFrom::Start(self.mdat_start + 8))?;
        file.write_all(&mdat_size.to_be_bytes())?;
        file.sync_all()?;

        Ok(Mp4Summary {
            frames,
            fps: self.fps,
            video_duration_s,
            audio_duration_s,
            duration_s,
        })
    }

    fn video_trak(&self, id: u32, timescale: u32, movie_duration: u32, wide: bool) -> Vec<u8> {
        let n = self.sizes.len() as u32;
        let mut b = Buf::default();

        b.u32(0).u32(0).u32(id).u32(0).u32(movie_duration).zeros(8);
        b.u16(0).u16(0).u16(0).u16(0).matrix();
        b.u32((self.width as u32) << 16).u32((self.height as u32) << 16);
        let tkhd = full_box(b"tkhd", 0, 3, &b.take());

        b.u32(0).u32(0).u32(timescale).u32(n * 1000).u16(0x55c4).u16(0);
        let mdhd = full_box(b"mdhd", 0, 0, &b.take());
        let hdlr = handler(b"vide", "VideoHandler");

        let vmhd = full_box(b"vmhd", 0, 1, &[0; 8]);

        let mut name = [0u8; 32];
        name[0] = 3;
        name[1..4].copy_from_slice(b"PNG");
        b.zeros(6).u16(1).u16(0).u16(0).zeros(12);
        b.u16(self.width as u16).u16(self.height as u16);
        b.u32(0x0048_0000).u32(0x0048_0000).u32(0).u16(1).bytes(&name).u16(0x18).u16(0xffff);
        let entry = bx(b"png ", &b.take());

        let stts = if n > 0 {
            full_box(b"stts", 0, 0, Buf::default().u32(1).u32(n).u32(1000).take().as_slice())
        } else {
            full_box(b"stts", 0, 0, &0u32.to_be_bytes())
        };
        b.u32(0).u32(n);
        for &s in &self.sizes {
            b.u32(s);
        }
        let stsz = full_box(b"stsz", 0, 0, &b.take());
        let stbl = sample_table(entry, stts, stsz, n, self.video_offset, wide);
        trak(tkhd, mdhd, hdlr, vmhd, stbl)
    }
}

fn handler(kind: &[u8; 4], name: &str) -> Vec<u8> {
    let mut b = Buf::default();
    b.u32(0).bytes(kind).zeros(12).bytes(name.as_bytes()).u8(0);
    full_box(b"hdlr", 0, 0, &b.take())
}

fn sample_table(entry: Vec<u8>, stts: Vec<u8>, stsz: Vec<u8>, samples: u32, offset: u64, wide: bool) -> Vec<u8> {
    let mut b = Buf::default();
    b.u32(1).bytes(&entry);
    let stsd = full_box(b"stsd", 0, 0, &b.take());
    let (stsc, stco) = if samples > 0 {
        let stsc = full_box(b"stsc", 0, 0, Buf::default().u32(1).u32(1).u32(samples).u32(1).take().as_slice());
        let stco = if wide {
            full_box(b"co64", 0, 0, Buf::default().u32(1).u64(offset).take().as_slice())
        } else {
            full_box(b"stco", 0, 0, Buf::default().u32(1).u32(offset as u32).take().as_slice())
        };
        (stsc, stco)
    } else {
        (
            full_box(b"stsc", 0, 0, &0u32.to_be_bytes()),
            full_box(b"stco", 0, 0, &0u32.to_be_bytes()),
        )
    };
    bx(b"stbl", &[stsd, stts, stsc, stsz, stco].concat())
}

fn trak(tkhd: Vec<u8>, mdhd: Vec<u8>, hdlr: Vec<u8>, media_header: Vec<u8>, stbl: Vec<u8>) -> Vec<u8> {
    let url = full_box(b"url ", 0, 1, &[]);
    let dref = full_box(b"dref", 0, 0, &[1u32.to_be_bytes().as_slice(), &url].concat());
    let dinf = bx(b"dinf", &dref);
    let minf = bx(b"minf", &[media_header, dinf, stbl].concat());
    let mdia = bx(b"mdia", &[mdhd, hdlr, minf].concat());
    bx(b"trak", &[tkhd, mdia].concat())
}

fn audio_trak(id: u32, a: &AudioSegment, offset: u64, movie_duration: u32, wide: bool) -> Vec<u8> {
    let n = a.len() as u32;
    let mut b = Buf::default();
    b.u32(0).u32(0).u32(id).u32(0).u32(movie_duration).zeros(8);
    b.u16(0).u16(1).u16(0x0100).u16(0).matrix().u32(0).u32(0);
    let tkhd = full_box(b"tkhd", 0, 3, &b.take());

    b.u32(0).u32(0).u32(a.sample_rate).u32(n).u16(0x55c4).u16(0);
    let mdhd = full_box(b"mdhd", 0, 0, &b.take());
    let hdlr = handler(b"soun", "SoundHandler");
    let smhd = full_box(b"smhd", 0, 0, &[0; 4]);

    b.zeros(6).u16(1).zeros(8).u16(1).u16(16).u16(0).u16(0).u32(a.sample_rate << 16);
    let entry = bx(b"sowt", &b.take());
    let stts = full_box(b"stts", 0, 0, Buf::default().u32(1).u32(n).u32(1).take().as_slice());
    let stsz = full_box(b"stsz", 0, 0, Buf::default().u32(2).u32(n).take().as_slice());
    let stbl = sample_table(entry, stts, stsz, n, offset, wide);
    trak(tkhd, mdhd, hdlr, smhd, stbl)
}

/// Writes a whole frame sequence (and optional audio) in one call.
pub fn write_mp4(path: &Path, video: &FrameSequence, audio: Option<&AudioSegment>) -> Result<Mp4Summary, ContainerError> {
    let first = video
        .frames
        .first()
        .ok_or_else(|| ContainerError::Unsupported("empty frame sequence".into()))?;
    let mut w = Mp4Writer::create(path, first.width(), first.height(), video.fps)?;
    for f in &video.frames {
        w.push_frame(f)?;
    }
    w.finish(audio)
}

// ---- demuxing ----

struct Atom<'a> {
    kind: [u8; 4],
    body: &'a [u8],
}

fn atoms(mut data: &[u8]) -> Result<Vec<Atom<'_>>, ContainerError> {
    let mut out = Vec::new();
    while data.len() >= 8 {
        let size32 = u32::from_be_bytes(data[0..4].try_into().unwrap()) as u64;
        let kind: [u8; 4] = data[4..8].try_into().unwrap();
        let (header, size) = match size32 {
            0 => (8, data.len() as u64),
            1 => {
                if data.len() < 16 {
                    return Err(ContainerError::Malformed("truncated large box header".into()));
                }
                (16, u64::from_be_bytes(data[8..16].try_into().unwrap()))
            }
            s => (8, s),
        };
        if size < header as u64 || size > data.len() as u64 {
            return Err(ContainerError::Malformed(format!(
                "box {} claims {size} bytes, {} available",
                String::from_utf8_lossy(&kind),
                data.len()
            )));
        }
        out.push(Atom {
            kind,
            body: &data[header..size as usize],
        });
        data = &data[size as usize..];
    }
    Ok(out)
}

fn child<'a>(parent: &'a [u8], kind: &[u8; 4]) -> Result<&'a [u8], ContainerError> {
    atoms(parent)?
        .into_iter()
        .find(|a| &a.kind == kind)
        .map(|a| a.body)
        .ok_or_else(|| ContainerError::Malformed(format!("missing {} box", String::from_utf8_lossy(kind))))
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(data: &'a [u8]) -> Self {
        Self { data, pos: 0 }
    }
    fn take(&mut self, n: usize) -> Result<&'a [u8], ContainerError> {
        let s = self
            .data
            .get(self.pos..self.pos + n)
            .ok_or_else(|| ContainerError::Malformed("truncated box".into()))?;
        self.pos += n;
        Ok(s)
    }
    fn u16(&mut self) -> Result<u16, ContainerError> {
        Ok(u16::from_be_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32, ContainerError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, ContainerError> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().unwrap()))
    }
}

struct Track {
    handler: [u8; 4],
    timescale: u32,
    format: [u8; 4],
    bits: u16,
    stts: Vec<(u32, u32)>,
    samples: Vec<(u64, u32)>,
}

fn parse_track(trak: &[u8]) -> Result<Track, ContainerError> {
    let mdia = child(trak, b"mdia")?;
    let mut r = Reader::new(child(mdia, b"mdhd")?);
    let version = r.take(4)?[0];
    let timescale = if version == 1 {
        r.take(16)?;
        r.u32()?
    } else {
        r.take(8)?;
        r.u32()?
    };
    let mut r = Reader::new(child(mdia, b"hdlr")?);
    r.take(8)?;
    let handler: [u8; 4] = r.take(4)?.try_into().unwrap();
    let stbl = child(child(mdia, b"minf")?, b"stbl")?;

    let mut r = Reader::new(child(stbl, b"stsd")?);
    r.take(8)?;
    let entries = atoms(&r.data[r.pos..])?;
    let entry = entries.first().ok_or_else(|| ContainerError::Malformed("empty stsd".into()))?;
    let format = entry.kind;
    let bits = if &handler == b"soun" {
        let mut e = Reader::new(entry.body);
        e.take(8 + 8 + 2)?;
        e.u16()?
    } else {
        0
    };

    let mut r = Reader::new(child(stbl, b"stts")?);
    r.take(4)?;
    let stts = (0..r.u32()?)
        .map(|_| Ok((r.u32()?, r.u32()?)))
        .collect::<Result<Vec<_>, ContainerError>>()?;

    let mut r = Reader::new(child(stbl, b"stsz")?);
    r.take(4)?;
    let fixed = r.u32()?;
    let count = r.u32()? as usize;
    let sizes: Vec<u32> = if fixed != 0 {
        vec![fixed; count]
    } else {
        (0..count).map(|_| r.u32()).collect::<Result<_, _>>()?
    };

    let mut r = Reader::new(child(stbl, b"stsc")?);
    r.take(4)?;
    let stsc = (0..r.u32()?)
        .map(|_| {
            let first = r.u32()?;
            let per = r.u32()?;
            r.u32()?;
            Ok((first, per))
        })
        .collect::<Result<Vec<_>, ContainerError>>()?;

    let offsets: Vec<u64> = match child(stbl, b"stco") {
        Ok(b) => {
            let mut r = Reader::new(b);
            r.take(4)?;
            (0..r.u32()?).map(|_| r.u32().map(u64::from)).collect::<Result<_, _>>()?
        }
        Err(_) => {
            let mut r = Reader::new(child(stbl, b"co64")?);
            r.take(4)?;
            (0..r.u32()?).map(|_| r.u64()).collect::<Result<_, _>>()?
        }
    };

    let mut samples = Vec::with_capacity(count);
    let mut next = 0usize;
    for (ci, &base) in offsets.iter().enumerate() {
        let chunk_no = ci as u32 + 1;
        let per = stsc
            .iter()
            .rev()
            .find(|(first, _)| *first <= chunk_no)
            .map(|&(_, p)| p)
            .ok_or_else(|| ContainerError::Malformed("chunk without stsc entry".into()))?;
        let mut off = base;
        for _ in 0..per {
            let Some(&size) = sizes.get(next) else { break };
            samples.push((off, size));
            off += size as u64;
            next += 1;
        }
    }
    if samples.len() != count {
        return Err(ContainerError::Malformed(format!(
            "sample table maps {} of {count} samples",
            samples.len()
        )));
    }
    Ok(Track {
        handler,
        timescale,
        format,
        bits,
        stts,
        samples,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodedMp4 {
    pub video: FrameSequence,
    pub audio: Option<AudioSegment>,
    pub duration_s: f64,
}

pub fn read_mp4(path: &Path) -> Result<DecodedMp4, ContainerError> {
    let mut data = Vec::new();
    File::open(path)?.read_to_end(&mut data)?;
    decode_mp4(&data)
}

pub fn decode_mp4(data: &[u8]) -> Result<DecodedMp4, ContainerError> {
    let top = atoms(data)?;
    let moov = top
        .iter()
        .find(|a| &a.kind == b"moov")
        .ok_or_else(|| ContainerError::Malformed("missing moov box".into()))?
        .body;
    let mut r = Reader::new(child(moov, b"mvhd")?);
    let version = r.take(4)?[0];
    let (timescale, duration) = if version == 1 {
        r.take(16)?;
        (r.u32()?, r.u64()?)
    } else {
        r.take(8)?;
        (r.u32()?, r.u32()? as u64)
    };
    if timescale == 0 {
        return Err(ContainerError::Malformed("zero movie timescale".into()));
    }

    let sample = |off: u64, size: u32| -> Result<&[u8], ContainerError> {
        data.get(off as usize..off as usize + size as usize)
            .ok_or_else(|| ContainerError::Malformed("sample outside file".into()))
    };

    let mut video = None;
    let mut audio = None;
    for a in atoms(moov)?.into_iter().filter(|a| &a.kind == b"trak") {
        let t = parse_track(a.body)?;
        match &t.handler {
            b"vide" => {
                if &t.format != b"png " {
                    return Err(ContainerError::Unsupported(format!(
                        "video codec `{}`",
                        String::from_utf8_lossy(&t.format)
                    )));
                }
                let delta = t.stts.first().map_or(1, |&(_, d)| d.max(1));
                let fps = t.timescale as f64 / delta as f64;
                let frames = t
                    .samples
                    .iter()
                    .map(|&(o, s)| Ok(ImageBuffer::decode_png(sample(o, s)?)?))
                    .collect::<Result<Vec<_>, ContainerError>>()?;
                video = Some(FrameSequence::new(frames, fps));
            }
            b"soun" => {
                let little = match &t.format {
                    b"sowt" => true,
                    b"twos" => false,
                    other => {
                        return Err(ContainerError::Unsupported(format!(
                            "audio codec `{}`",
                            String::from_utf8_lossy(other)
                        )))
                    }
                };
                if t.bits != 16 {
                    return Err(ContainerError::Unsupported(format!("{}-bit PCM", t.bits)));
                }
                let mut samples = Vec::with_capacity(t.samples.len());
                for &(o, s) in &t.samples {
                    for pair in sample(o, s)?.chunks_exact(2) {
                        let raw = [pair[0], pair[1]];
                        let v = if little { i16::from_le_bytes(raw) } else { i16::from_be_bytes(raw) };
                        samples.push(crate::voicing::i16_to_f32(v));
                    }
                }
                audio = Some(AudioSegment::new(t.timescale.max(1), samples));
            }
            _ => {}
        }
    }
    let video = video.ok_or_else(|| ContainerError::Malformed("no video track".into()))?;
    Ok(DecodedMp4 {
        video,
        audio,
        duration_s: duration as f64 / timescale as f64,
    })
}
