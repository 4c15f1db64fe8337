//! Request/response transports carrying frames: an in-process loopback that
//! still encodes and decodes every frame, and a TCP transport.

use std::io::{BufReader, BufWriter, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use thiserror::Error;

use super::bus::{Bus, BusError};
use super::frame::{decode_frame, read_frame, write_frame, Channel, Frame, FrameError};
use super::message::BusMessage;
use crate::archive::wire::{self, ArchiveRequest, ArchiveResponse, ErrorBody};
use crate::archive::Archive;

#[derive(Debug, Error)]
pub enum TransportError {
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error("no handler for channel {0:?}")]
    NoHandler(Channel),
    #[error("connection closed")]
    Closed,
    #[error("unexpected reply: {0}")]
    Reply(String),
}

impl From<std::io::Error> for TransportError {
    fn from(e: std::io::Error) -> Self {
        TransportError::Frame(FrameError::Io(e))
    }
}

pub trait FrameHandler: Send + Sync {
    fn handle(&self, frame: Frame) -> Result<Frame, TransportError>;
}

impl FrameHandler for Bus {
    fn handle(&self, frame: Frame) -> Result<Frame, TransportError> {
        if frame.channel != Channel::Orders {
            return Err(TransportError::NoHandler(frame.channel));
        }
        Ok(Frame::new(
            Channel::Orders,
            self.handle_payload(&frame.payload).to_payload(),
        ))
    }
}

impl FrameHandler for Archive {
    fn handle(&self, frame: Frame) -> Result<Frame, TransportError> {
        if frame.channel != Channel::Archive {
            return Err(TransportError::NoHandler(frame.channel));
        }
        let response = match ArchiveRequest::from_bytes(&frame.payload) {
            Ok(req) => wire::handle(self, &req),
            Err(e) => ArchiveResponse::Error(ErrorBody {
                code: "BadRequest".into(),
                message: e.to_string(),
            }),
        };
        Ok(Frame::new(Channel::Archive, response.to_bytes()))
    }
}

/// Dispatches frames to one handler per channel.
#[derive(Default, Clone)]
pub struct Router {
    orders: Option<Arc<dyn FrameHandler>>,
    archive: Option<Arc<dyn FrameHandler>>,
    sovereign: Option<Arc<dyn FrameHandler>>,
}

impl Router {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, channel: Channel, handler: Arc<dyn FrameHandler>) -> Self {
        match channel {
            Channel::Orders => self.orders = Some(handler),
            Channel::Archive => self.archive = Some(handler),
            Channel::Sovereign => self.sovereign = Some(handler),
        }
        self
    }
}

impl FrameHandler for Router {
    fn handle(&self, frame: Frame) -> Result<Frame, TransportError> {
        let h = match frame.channel {
            Channel::Orders => &self.orders,
            Channel::Archive => &self.archive,
            Channel::Sovereign => &self.sovereign,
        };
        h.as_ref()
            .ok_or(TransportError::NoHandler(frame.channel))?
            .handle(frame)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ChannelStats {
    pub frames: u64,
    pub bytes: u64,
    pub max_payload: u64,
}

/// Records every frame a transport puts on the wire.
#[derive(Debug, Clone, Default)]
pub struct WireTap(Arc<Mutex<[ChannelStats; 3]>>);

impl WireTap {
    pub fn new() -> Self {
        Self::default()
    }

    fn slot(ch: Channel) -> usize {
        ch as usize - 1
    }

    pub fn record(&self, channel: Channel, payload_len: usize) {
        let mut s = self.0.lock().unwrap();
        let c = &mut s[Self::slot(channel)];
        c.frames += 1;
        c.bytes += payload_len as u64;
        c.max_payload = c.max_payload.max(payload_len as u64);
    }

    pub fn stats(&self, channel: Channel) -> ChannelStats {
        self.0.lock().unwrap()[Self::slot(channel)]
    }
}

pub trait Transport: Send + Sync {
    fn request(&self, channel: Channel, payload: &[u8]) -> Result<Frame, TransportError>;
}

/// In-process transport. Frames are serialized and reparsed so the cap and
/// the layout are enforced exactly as on a socket.
pub struct Loopback {
    handler: Arc<dyn FrameHandler>,
    tap: WireTap,
}

impl Loopback {
    pub fn new(handler: Arc<dyn FrameHandler>, tap: WireTap) -> Self {
        Self { handler, tap }
    }

    pub fn tap(&self) -> &WireTap {
        &self.tap
    }
}

impl Transport for Loopback {
    fn request(&self, channel: Channel, payload: &[u8]) -> Result<Frame, TransportError> {
        let bytes = super::frame::encode_frame(channel, payload)?;
        self.tap.record(channel, payload.len());
        let reply = self.handler.handle(decode_frame(&bytes)?)?;
        let reply_bytes = reply.encode()?;
        self.tap.record(reply.channel, reply.payload.len());
        Ok(decode_frame(&reply_bytes)?)
    }
}

pub struct TcpTransport {
    conn: Mutex<(BufReader<TcpStream>, BufWriter<TcpStream>)>,
    tap: WireTap,
}

impl TcpTransport {
    pub fn connect(addr: impl ToSocketAddrs, tap: WireTap) -> Result<Self, TransportError> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        let reader = BufReader::new(stream.try_clone()?);
        Ok(Self {
            conn: Mutex::new((reader, BufWriter::new(stream))),
            tap,
        })
    }
}

impl Transport for TcpTransport {
    fn request(&self, channel: Channel, payload: &[u8]) -> Result<Frame, TransportError> {
        let mut conn = self.conn.lock().unwrap();
        let (reader, writer) = &mut *conn;
        write_frame(writer, channel, payload)?;
        writer.flush()?;
        self.tap.record(channel, payload.len());
        let reply = read_frame(reader)?.ok_or(TransportError::Closed)?;
        self.tap.record(reply.channel, reply.payload.len());
        Ok(reply)
    }
}

/// Accepts connections and serves each on its own thread until dropped.
pub struct TcpServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    accept: Option<JoinHandle<()>>,
}

fn serve_conn(stream: TcpStream, handler: Arc<dyn FrameHandler>) -> Result<(), TransportError> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut writer = BufWriter::new(stream);
    while let Some(frame) = read_frame(&mut reader)? {
        let reply = handler.handle(frame)?;
        write_frame(&mut writer, reply.channel, &reply.payload)?;
        writer.flush()?;
    }
    Ok(())
}

impl TcpServer {
    pub fn spawn(listener: TcpListener, handler: Arc<dyn FrameHandler>) -> std::io::Result<Self> {
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let flag = stop.clone();
        let accept = std::thread::spawn(move || {
            for stream in listener.incoming() {
                if flag.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = stream else { continue };
                let h = handler.clone();
                std::thread::spawn(move || {
                    // A protocol error ends only this connection.
                    let _ = serve_conn(stream, h);
                });
            }
        });
        Ok(Self {
            addr,
            stop,
            accept: Some(accept),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }
}

impl Drop for TcpServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }
}

/// Typed ORDERS-channel client over any transport.
pub struct BusClient<T: Transport> {
    transport: T,
}

impl<T: Transport> BusClient<T> {
    pub fn new(transport: T) -> Self {
        Self { transport }
    }

    pub fn transport(&self) -> &T {
        &self.transport
    }

    /// Send one message; `Error` replies become [`BusError::Remote`].
    pub fn send(&self, msg: &BusMessage) -> Result<Result<BusMessage, BusError>, TransportError> {
        let reply = self.transport.request(Channel::Orders, &msg.to_payload())?;
        if reply.channel != Channel::Orders {
            return Err(TransportError::Reply(format!("reply on {:?}", reply.channel)));
        }
        let msg = BusMessage::from_payload(&reply.payload).map_err(|e| TransportError::Reply(e.to_string()))?;
        Ok(match msg {
            BusMessage::Error { code, message } => Err(BusError::Remote { code, message }),
            other => Ok(other),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::archive::{DataObject, ObjectIndex};
    use crate::identity::TypeId;
    use crate::orders::frame::ORDERS_PAYLOAD_LIMIT;
    use crate::orders::message::{InspectionOrder, OrderState};
    use crate::procedure::{Procedure, ProcedureBook};
    use crate::registry::Registry;
    use crate::semantics::{tags, Dictionary, Method};
    use crate::time::{LogicalClock, Timestamp};
    use std::collections::BTreeMap;

    struct NoObjects;
    impl ObjectIndex for NoObjects {
        fn order_of(&self, _: &str) -> Option<String> {
            None
        }
    }

    fn bus() -> Arc<Bus> {
        let book = ProcedureBook::new([Procedure {
            procedure_id: "UT-P1".into(),
            method: Method::UT,
            rows: 2,
            cols: 2,
            reject_threshold: 50.0,
            rework_threshold: None,
            detection_floor: 20.0,
            min_refs: 1,
        }])
        .unwrap();
        Arc::new(Bus::new(
            Arc::new(Registry::new(Dictionary::standard())),
            book,
            Arc::new(NoObjects),
            LogicalClock::new(),
        ))
    }

    fn order(id: &str) -> BusMessage {
        BusMessage::Order(InspectionOrder {
            order_id: id.into(),
            component_serial: "C-1".into(),
            component_type: TypeId::new("acme", "shaft").unwrap(),
            procedure_id: "UT-P1".into(),
            station: None,
            due: Timestamp::epoch(),
            priority: 0,
            extra: BTreeMap::new(),
            attachment: None,
            attachment_ref: None,
        })
    }

    #[test]
    fn loopback_round_trip_and_tap() {
        let tap = WireTap::new();
        let client = BusClient::new(Loopback::new(bus(), tap.clone()));
        let ok = client.send(&order("O1")).unwrap().unwrap();
        assert!(matches!(
            ok,
            BusMessage::Ack {
                state: OrderState::Queued,
                ..
            }
        ));
        let dup = client.send(&order("O1")).unwrap();
        assert!(matches!(dup, Err(BusError::Remote { ref code, .. }) if code == "DuplicateOrder"));
        assert_eq!(tap.stats(Channel::Orders).frames, 4);

        let huge = vec![b' '; ORDERS_PAYLOAD_LIMIT + 1];
        assert!(matches!(
            client.transport().request(Channel::Orders, &huge),
            Err(TransportError::Frame(FrameError::OversizedPayload { .. }))
        ));
        assert!(tap.stats(Channel::Orders).max_payload <= ORDERS_PAYLOAD_LIMIT as u64);
    }

    #[test]
    fn router_and_missing_channel() {
        let dir = tempfile::tempdir().unwrap();
        let archive = Arc::new(Archive::open(dir.path(), Dictionary::standard(), LogicalClock::new()).unwrap());
        let router = Router::new()
            .with(Channel::Orders, bus())
            .with(Channel::Archive, archive);
        let lo = Loopback::new(Arc::new(router), WireTap::new());
        let mut obj = DataObject::new();
        for (t, v) in [
            (tags::OBJECT_UID, "obj-1"),
            (tags::ORDER_ID, "O1"),
            (tags::COMPONENT_SERIAL, "C-1"),
            (tags::METHOD_CODE, "UT"),
        ] {
            obj.set_str(t, v);
        }
        let reply = lo
            .request(Channel::Archive, &ArchiveRequest::Store(obj).to_bytes())
            .unwrap();
        assert_eq!(
            ArchiveResponse::from_bytes(&reply.payload).unwrap(),
            ArchiveResponse::Stored("obj-1".into())
        );
        assert!(matches!(
            lo.request(Channel::Sovereign, b"x"),
            Err(TransportError::NoHandler(Channel::Sovereign))
        ));
    }

    #[test]
    fn tcp_transport_matches_loopback() {
        let server = TcpServer::spawn(TcpListener::bind("127.0.0.1:0").unwrap(), bus()).unwrap();
        let client = BusClient::new(TcpTransport::connect(server.addr(), WireTap::new()).unwrap());
        assert!(client.send(&order("O1")).unwrap().is_ok());
        assert!(client.send(&order("O2")).unwrap().is_ok());
        assert!(client.send(&order("O1")).unwrap().is_err());
        drop(client);
        drop(server);
    }
}
