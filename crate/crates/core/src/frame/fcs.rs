//! Ethernet frame check sequence (CRC-32, reflected polynomial 0xEDB88320,
//! init 0xFFFFFFFF, final xor 0xFFFFFFFF). With this convention the CRC of
//! the empty input is 0x00000000 and the check value of `"123456789"` is
//! 0xCBF43926.
//!
//! The FCS is transmitted least-significant byte first. Running [`fcs32`]
//! over a frame with its FCS appended yields [`FCS_RESIDUE`].

/// CRC of any frame followed by its own little-endian FCS.
pub const FCS_RESIDUE: u32 = 0x2144_DF1C;

const POLY: u32 = 0xEDB8_8320;

const TABLE: [u32; 256] = build_table();

const fn build_table() -> [u32; 256] {
    let mut table = [0u32; 256];
    let mut i = 0;
    while i < 256 {
        let mut c = i as u32;
        let mut k = 0;
        while k < 8 {
            c = if c & 1 != 0 { POLY ^ (c >> 1) } else { c >> 1 };
            k += 1;
        }
        table[i] = c;
        i += 1;
    }
    table
}

pub fn fcs32(bytes: &[u8]) -> u32 {
    let mut crc = 0xFFFF_FFFFu32;
    for &b in bytes {
        crc = TABLE[((crc ^ b as u32) & 0xff) as usize] ^ (crc >> 8);
    }
    crc ^ 0xFFFF_FFFF
}

/// Appends the little-endian FCS to `frame`.
pub fn append_fcs(frame: &mut Vec<u8>) {
    let fcs = fcs32(frame);
    frame.extend_from_slice(&fcs.to_le_bytes());
}
