// Wire frames exchanged with the gateway, one JSON object per socket
// message. Field names and "type" strings mirror the server contract
// exactly; do not rename.

export type Role = "user" | "bot";

export interface WireMessage {
  id: number;
  role: Role;
  text: string;
  sealed_with_ellipsis: boolean;
  act: "understanding" | "answer" | null;
  sent_ts: number;
  draft_started_ts: number;
}

export type ServerEvent =
  | { type: "peer_draft"; role: Role; text: string }
  | { type: "bot_char"; text_chunk: string }
  | { type: "bot_retract"; mode: "full" | "seal"; visible_text: string }
  | { type: "bot_send"; message: WireMessage }
  | { type: "user_message_ack"; message: WireMessage }
  | { type: "status"; bot: "typing" | "idle" }
  | { type: "error"; code: string; detail: string };

export type ClientEvent =
  | { type: "hello"; session_id: string }
  | { type: "draft_update"; text: string; ts: number }
  | { type: "send"; ts: number };

const SERVER_TYPES = new Set([
  "peer_draft",
  "bot_char",
  "bot_retract",
  "bot_send",
  "user_message_ack",
  "status",
  "error",
]);

export function decodeServerEvent(line: string): ServerEvent | null {
  try {
    const parsed = JSON.parse(line);
    if (parsed && typeof parsed === "object" && SERVER_TYPES.has(parsed.type)) {
      return parsed as ServerEvent;
    }
  } catch {
    // fall through: malformed frames are dropped by the caller
  }
  return null;
}

export function encodeClientEvent(event: ClientEvent): string {
  return JSON.stringify(event);
}
