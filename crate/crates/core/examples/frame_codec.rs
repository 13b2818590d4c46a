//! Builds one frame of every protocol type, prints its wire image and
//! decodes it back.
//!
//!     cargo run --example frame_codec

use bytes::Bytes;
use safnet::frame::{
    decode_frame, DiscoveryPayload, Frame, KernelCmd, MacAddress, MemAck, MemWrite, OutputChunk, Payload, PrAck,
    PrChunk, Probe,
};
use safnet::report::hex;

fn main() {
    let host = MacAddress::local(1);
    let dev = MacAddress::local(0x100);
    let frames = [
        Frame::new(
            MacAddress::BROADCAST,
            dev,
            &Payload::Discovery(DiscoveryPayload {
                mac0: dev,
                mac1: MacAddress::local(0x8100),
                vendor_id: 0x1172,
                product_id: 0x385a,
            }),
        ),
        Frame::new(
            dev,
            host,
            &Payload::PrChunk(PrChunk {
                offset: 0,
                total_len: 4,
                data: Bytes::from_static(b"\xde\xad\xbe\xef"),
            }),
        ),
        Frame::new(host, dev, &Payload::PrAck(PrAck { status: 0, digest: [0xab; 32] })),
        Frame::new(
            dev,
            host,
            &Payload::MemWrite(MemWrite {
                arg_index: 0,
                offset: 0,
                total_len: 16,
                words: vec![1, 2],
            }),
        ),
        Frame::new(host, dev, &Payload::MemAck(MemAck { arg_index: 0, status: 0 })),
        Frame::new(dev, host, &Payload::KernelCmd(KernelCmd { address: 0, data: 0x0200_0000_0000 })),
        Frame::new(
            host,
            dev,
            &Payload::Output(OutputChunk {
                stream_offset: 0,
                total_len: 8,
                words: vec![42],
            }),
        ),
        Frame::new(MacAddress::BROADCAST, host, &Payload::Probe(Probe { sequence: 7 })),
    ];

    for f in &frames {
        let wire = f.encode().expect("fits the MTU");
        println!("{:?} ({:#06x}), {} bytes", f.ethertype, f.ethertype.value(), wire.len());
        println!("  {}", hex(&wire));
        let back = decode_frame(wire).expect("own output decodes");
        println!("  {:?}", back.decode_payload().expect("well formed"));
    }
}
