/**
 * Wire types for the rating service JSON API.
 */

export type Choice = 'A' | 'B' | 'skip';

export interface TrialPayload {
  trial: number;
  trial_count: number;
  subject: string;
  roi: string;
  axis: string;
  center_index: number;
  offsets: number[]; // [-2, -1, 0, 1, 2]
  recorded: boolean;
  base: string[]; // 5 grayscale PNGs, base64
  overlays: { A: string[]; B: string[] };
}

export interface SessionInfo {
  session_id: string;
  trial_count: number;
  recorded: number;
  complete: boolean;
}

export interface ChoiceAck {
  ok: boolean;
  recorded: number;
  complete: boolean;
}

export interface RoiCounts {
  candidate_1: number;
  candidate_2: number;
  skip: number;
}

export interface TallyDoc {
  study: string;
  candidates: { candidate_1: string; candidate_2: string };
  sessions: number;
  rois: Record<string, RoiCounts>;
}
