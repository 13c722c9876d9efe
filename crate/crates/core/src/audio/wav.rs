//! RIFF/WAVE reading and 16-bit PCM writing on top of `hound`.

use std::fs;
use std::io::{Cursor, ErrorKind};
use std::path::Path;

use super::{AudioBuffer, AudioError};

const MP3_HINT: &str = "compressed audio must be converted to PCM WAV first; set `decoder_command` in the audio config";

fn looks_like_mp3(bytes: &[u8]) -> bool {
    bytes.starts_with(b"ID3") || (bytes.len() >= 2 && bytes[0] == 0xFF && bytes[1] & 0xE0 == 0xE0)
}

fn map_hound(e: hound::Error) -> AudioError {
    match e {
        hound::Error::IoError(io)
            if io.kind() == ErrorKind::UnexpectedEof || io.to_string().contains("enough bytes") =>
        {
            AudioError::TruncatedData
        }
        hound::Error::IoError(io) => AudioError::Io(io),
        hound::Error::FormatError(msg) if msg.contains("RIFF") || msg.contains("WAVE") => AudioError::NotRiff,
        hound::Error::FormatError(msg) => AudioError::Malformed(msg.to_string()),
        hound::Error::Unsupported => AudioError::UnsupportedEncoding(
            "only integer PCM (8/16/24/32-bit) and 32-bit float WAV are supported; ".to_string() + MP3_HINT,
        ),
        other => AudioError::Malformed(other.to_string()),
    }
}

pub fn read_wav(path: &Path) -> Result<AudioBuffer, AudioError> {
    let bytes = fs::read(path)?;
    decode_wav(&bytes)
}

/// Decodes a WAV image, normalizing integer samples by `2^(bits-1)` and
/// averaging channels to mono.
pub fn decode_wav(bytes: &[u8]) -> Result<AudioBuffer, AudioError> {
    if !bytes.starts_with(b"RIFF") {
        if looks_like_mp3(bytes) {
            return Err(AudioError::UnsupportedEncoding(format!("input looks like MP3; {MP3_HINT}")));
        }
        return Err(AudioError::NotRiff);
    }
    let mut reader = hound::WavReader::new(Cursor::new(bytes)).map_err(map_hound)?;
    let spec = reader.spec();
    if spec.channels == 0 || spec.sample_rate == 0 {
        return Err(AudioError::Malformed("zero channels or sample rate".into()));
    }
    let expected = reader.len() as usize;
    let interleaved: Vec<f64> = match spec.sample_format {
        hound::SampleFormat::Int => {
            let scale = f64::from(1u32 << (spec.bits_per_sample - 1));
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| f64::from(v) / scale))
                .collect::<Result<_, _>>()
                .map_err(map_hound)?
        }
        hound::SampleFormat::Float => reader
            .samples::<f32>()
            .map(|s| s.map(|v| f64::from(v).clamp(-1.0, 1.0)))
            .collect::<Result<_, _>>()
            .map_err(map_hound)?,
    };
    if interleaved.len() < expected {
        return Err(AudioError::TruncatedData);
    }
    let channels = usize::from(spec.channels);
    let samples = if channels == 1 {
        interleaved
    } else {
        interleaved
            .chunks_exact(channels)
            .map(|frame| frame.iter().sum::<f64>() / channels as f64)
            .collect()
    };
    Ok(AudioBuffer::new(samples, spec.sample_rate))
}

fn quantize(x: f64) -> i16 {
    (x * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

/// Mono 16-bit PCM WAV bytes.
pub fn encode_wav_pcm16(buf: &AudioBuffer) -> Vec<u8> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: buf.sample_rate_hz,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut cursor = Cursor::new(Vec::new());
    {
        let mut writer = hound::WavWriter::new(&mut cursor, spec).expect("in-memory writer");
        for &s in &buf.samples {
            writer.write_sample(quantize(s)).expect("in-memory write");
        }
        writer.finalize().expect("in-memory finalize");
    }
    cursor.into_inner()
}

/// Interleaved multi-channel 16-bit PCM, used by the fixture generator.
pub fn encode_wav_pcm16_interleaved(channels: &[Vec<f64>], sample_rate: u32) -> Vec<u8> {
    let spec = hound::WavSpec {
        channels: channels.len() as u16,
        sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let frames = channels.iter().map(Vec::len).min().unwrap_or(0);
    let mut cursor = Cursor::new(Vec::new());
    {
        let mut writer = hound::WavWriter::new(&mut cursor, spec).expect("in-memory writer");
        for i in 0..frames {
            for ch in channels {
                writer.write_sample(quantize(ch[i])).expect("in-memory write");
            }
        }
        writer.finalize().expect("in-memory finalize");
    }
    cursor.into_inner()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wav_bytes(spec: hound::WavSpec, write: impl FnOnce(&mut hound::WavWriter<&mut Cursor<Vec<u8>>>)) -> Vec<u8> {
        let mut cursor = Cursor::new(Vec::new());
        {
            let mut w = hound::WavWriter::new(&mut cursor, spec).unwrap();
            write(&mut w);
            w.finalize().unwrap();
        }
        cursor.into_inner()
    }

    fn spec(channels: u16, bits: u16, format: hound::SampleFormat) -> hound::WavSpec {
        hound::WavSpec { channels, sample_rate: 16000, bits_per_sample: bits, sample_format: format }
    }

    #[test]
    fn pcm16_normalization() {
        let bytes = wav_bytes(spec(1, 16, hound::SampleFormat::Int), |w| {
            for s in [0i16, 16384, -32768] {
                w.write_sample(s).unwrap();
            }
        });
        let buf = decode_wav(&bytes).unwrap();
        assert_eq!(buf.sample_rate_hz, 16000);
        let lsb = 1.0 / 32768.0;
        for (got, want) in buf.samples.iter().zip([0.0, 0.5, -1.0]) {
            assert!((got - want).abs() <= lsb, "{got} vs {want}");
        }
    }

    #[test]
    fn stereo_is_averaged() {
        let bytes = wav_bytes(spec(2, 32, hound::SampleFormat::Float), |w| {
            for _ in 0..4 {
                w.write_sample(1.0f32).unwrap();
                w.write_sample(0.0f32).unwrap();
            }
        });
        let buf = decode_wav(&bytes).unwrap();
        assert_eq!(buf.samples, vec![0.5; 4]);
    }

    #[test]
    fn other_integer_depths() {
        let b8 = wav_bytes(spec(1, 8, hound::SampleFormat::Int), |w| {
            w.write_sample(64i8).unwrap();
            w.write_sample(-128i8).unwrap();
        });
        assert_eq!(decode_wav(&b8).unwrap().samples, vec![0.5, -1.0]);
        let b24 = wav_bytes(spec(1, 24, hound::SampleFormat::Int), |w| {
            w.write_sample(1 << 22).unwrap();
        });
        assert_eq!(decode_wav(&b24).unwrap().samples, vec![0.5]);
        let b32 = wav_bytes(spec(1, 32, hound::SampleFormat::Int), |w| {
            w.write_sample(i32::MIN).unwrap();
        });
        assert_eq!(decode_wav(&b32).unwrap().samples, vec![-1.0]);
    }

    #[test]
    fn rejects_non_riff_and_mp3() {
        assert!(matches!(decode_wav(b"hello world"), Err(AudioError::NotRiff)));
        let err = decode_wav(b"ID3\x04\x00\x00\x00\x00\x00\x00").unwrap_err();
        match err {
            AudioError::UnsupportedEncoding(msg) => assert!(msg.contains("decoder_command")),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(decode_wav(&[0xFF, 0xFB, 0x90, 0x00]), Err(AudioError::UnsupportedEncoding(_))));
    }

    #[test]
    fn rejects_compressed_wav() {
        let mut bytes = wav_bytes(spec(1, 16, hound::SampleFormat::Int), |w| w.write_sample(0i16).unwrap());
        // fmt chunk audio format field: 0x0055 (MPEG layer 3)
        bytes[20] = 0x55;
        assert!(matches!(decode_wav(&bytes), Err(AudioError::UnsupportedEncoding(_))));
    }

    #[test]
    fn truncated_data() {
        let bytes = wav_bytes(spec(1, 16, hound::SampleFormat::Int), |w| {
            for _ in 0..100 {
                w.write_sample(1000i16).unwrap();
            }
        });
        let cut = &bytes[..bytes.len() - 51];
        assert!(matches!(decode_wav(cut), Err(AudioError::TruncatedData)));
        assert!(matches!(decode_wav(&bytes[..30]), Err(AudioError::TruncatedData | AudioError::Malformed(_))));
    }

    #[test]
    fn pcm16_round_trip() {
        let buf = AudioBuffer::new(vec![0.0, 0.25, -0.5, 32767.0 / 32768.0, -1.0], 8000);
        let back = decode_wav(&encode_wav_pcm16(&buf)).unwrap();
        assert_eq!(back, buf);
    }
}
