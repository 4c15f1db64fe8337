//! ORDERS channel: framing, workflow messages, the MES broker and transports.

pub mod bus;
pub mod frame;
pub mod message;
pub mod transport;

pub use bus::{Ack, Bus, BusError, Delivered, OrderRecord, Subscription, Topic};
pub use frame::{decode_frame, encode_frame, Channel, Frame, FrameError, ORDERS_PAYLOAD_LIMIT};
pub use message::{BusMessage, InspectionOrder, OrderState, ReportedValues, StatusEvent, Verdict};
pub use transport::{
    BusClient, FrameHandler, Loopback, Router, TcpServer, TcpTransport, Transport, TransportError, WireTap,
};
