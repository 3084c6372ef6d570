// Pure view-state reducer. The UI is a fold over the server frame stream:
// same initial state + same frames = same view, which is what makes the
// figure scenarios testable headlessly against recorded streams.
//
// Visual states follow the typing->sent transitions: the user's bubble goes
// gray to light blue on ack; the bot's streamed text goes gray to black on
// finalize. An interrupted-but-kept bot message is sealed with a trailing
// ellipsis. Live (unsent) items always sit below finalized messages, with
// the bot's typing text above the user's own draft bubble.

import type { ServerEvent, WireMessage } from "./protocol.js";

export type VisualState =
  | "draft_gray"
  | "sent_blue_bubble"
  | "typing_gray_text"
  | "sent_black_text";

export interface ViewMessage {
  id: number | null;
  role: "user" | "bot";
  text: string;
  visualState: VisualState;
  sealed: boolean;
}

export interface ViewState {
  messages: ViewMessage[];
  myDraft: string;
  /** true from Status{typing} until a terminal frame (send/retract/idle) */
  botTypingActive: boolean;
  /** client-clock time the last terminal frame arrived, for indicator decay */
  botIdleAt: number | null;
  connection: "ok" | "lost";
  /** frames that could not be applied, kept for the console */
  ignored: string[];
}

export function initialView(): ViewState {
  return {
    messages: [],
    myDraft: "",
    botTypingActive: false,
    botIdleAt: null,
    connection: "ok",
    ignored: [],
  };
}

function isLive(message: ViewMessage): boolean {
  return (
    message.visualState === "typing_gray_text" || message.visualState === "draft_gray"
  );
}

function findBotTyping(messages: ViewMessage[]): number {
  return messages.findIndex((m) => m.visualState === "typing_gray_text");
}

/** Insert a finalized message above every live (still-typing) item. */
function insertSent(messages: ViewMessage[], message: ViewMessage): ViewMessage[] {
  const at = messages.findIndex(isLive);
  const index = at === -1 ? messages.length : at;
  return [...messages.slice(0, index), message, ...messages.slice(index)];
}

function fromWire(message: WireMessage, visualState: VisualState): ViewMessage {
  return {
    id: message.id,
    role: message.role,
    text: message.text,
    visualState,
    sealed: message.sealed_with_ellipsis,
  };
}

export function reduce(view: ViewState, event: ServerEvent, now = 0): ViewState {
  switch (event.type) {
    case "bot_char": {
      const index = findBotTyping(view.messages);
      let messages: ViewMessage[];
      if (index === -1) {
        const typing: ViewMessage = {
          id: null,
          role: "bot",
          text: event.text_chunk,
          visualState: "typing_gray_text",
          sealed: false,
        };
        // the bot's typing text sits above the user's own draft bubble
        const draftAt = view.messages.findIndex((m) => m.visualState === "draft_gray");
        const at = draftAt === -1 ? view.messages.length : draftAt;
        messages = [...view.messages.slice(0, at), typing, ...view.messages.slice(at)];
      } else {
        messages = view.messages.map((m, i) =>
          i === index ? { ...m, text: m.text + event.text_chunk } : m
        );
      }
      return { ...view, messages, botTypingActive: true };
    }

    case "bot_send": {
      const typingAt = findBotTyping(view.messages);
      if (typingAt !== -1) {
        const messages = view.messages.map((m, i) =>
          i === typingAt ? fromWire(event.message, "sent_black_text") : m
        );
        return { ...view, messages, botTypingActive: false, botIdleAt: now };
      }
      const knownAt = view.messages.findIndex((m) => m.id === event.message.id);
      if (knownAt !== -1) {
        const messages = view.messages.map((m, i) =>
          i === knownAt ? fromWire(event.message, "sent_black_text") : m
        );
        return { ...view, messages, botTypingActive: false, botIdleAt: now };
      }
      // a seal retraction finalizes the bubble before its message frame
      // arrives; adopt the placeholder by matching text
      const sealedAt = view.messages.findIndex(
        (m) => m.id === null && m.role === "bot" && m.text === event.message.text
      );
      if (sealedAt !== -1) {
        const messages = view.messages.map((m, i) =>
          i === sealedAt ? fromWire(event.message, "sent_black_text") : m
        );
        return { ...view, messages, botTypingActive: false, botIdleAt: now };
      }
      return {
        ...view,
        messages: insertSent(view.messages, fromWire(event.message, "sent_black_text")),
        botTypingActive: false,
        botIdleAt: now,
      };
    }

    case "bot_retract": {
      const index = findBotTyping(view.messages);
      if (index === -1) {
        return { ...view, ignored: [...view.ignored, "bot_retract without typing text"] };
      }
      if (event.mode === "full") {
        return {
          ...view,
          messages: view.messages.filter((_, i) => i !== index),
          botTypingActive: false,
          botIdleAt: now,
        };
      }
      const messages = view.messages.map((m, i) =>
        i === index
          ? { ...m, text: event.visible_text + "...", visualState: "sent_black_text" as const, sealed: true }
          : m
      );
      return { ...view, messages, botTypingActive: false, botIdleAt: now };
    }

    case "user_message_ack": {
      const draftAt = view.messages.findIndex((m) => m.visualState === "draft_gray");
      const bubble = fromWire(event.message, "sent_blue_bubble");
      const without =
        draftAt === -1 ? view.messages : view.messages.filter((_, i) => i !== draftAt);
      return { ...view, messages: insertSent(without, bubble) };
    }

    case "status": {
      if (event.bot === "typing") {
        return { ...view, botTypingActive: true };
      }
      return { ...view, botTypingActive: false, botIdleAt: now };
    }

    case "peer_draft":
      // echo of our own draft; local state is already ahead of it
      return view;

    case "error":
      return { ...view, ignored: [...view.ignored, `${event.code}: ${event.detail}`] };
  }
}

export function reduceAll(view: ViewState, events: [ServerEvent, number][]): ViewState {
  return events.reduce((state, [event, now]) => reduce(state, event, now), view);
}
