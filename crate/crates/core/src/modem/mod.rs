//! Binary FSK (return-to-zero) and ASK over fan speed, and the sliding-FFT
//! receiver.

mod demod;
mod modulate;

pub use demod::{
    agreement, carrier_contrast, decide, demodulate, detect_enable, detect_enable_from, gate_decisions, stft_stream,
    CarrierStatus, Decision, DecodedFrame, DemodConfig, Demodulation, Demodulator, StftStream, WindowAmplitudes,
};
pub use modulate::{modulate_ask, modulate_fsk, AskParams, FskParams};
