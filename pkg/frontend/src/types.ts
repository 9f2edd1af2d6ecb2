export interface AttributeInfo {
  names: string[];
  n: number;
}

export interface TranslateResponse {
  image: string;
  latency_ms: number;
  self_ssim?: number;
}

export interface InterpolateResponse {
  frames: string[];
  sigma: number;
  steps: number;
  latency_ms: number;
}

export interface Banner {
  status: number;
  message: string;
}

export interface EditorState {
  image: string | null;
  sliders: Record<string, number>;
  alpha: number;
  frames: string[];
  inFlight: boolean;
}
